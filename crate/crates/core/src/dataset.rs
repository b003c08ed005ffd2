//! Instances with split tags and optional reference optima.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Where a reference value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RefKind {
    /// Exact optimum from the brute-force oracle.
    Exact,
    /// Optimum implied by the generator's construction.
    Bound,
    /// Best objective any method reached in the same run.
    BestFound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub value: f64,
    pub kind: RefKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub graph: Graph,
    pub split: Split,
    pub reference: Option<Reference>,
}

impl Instance {
    pub fn new(id: impl Into<String>, graph: Graph, split: Split) -> Self {
        Instance {
            id: id.into(),
            graph,
            split,
            reference: None,
        }
    }

    pub fn with_reference(mut self, value: f64, kind: RefKind) -> Self {
        self.reference = Some(Reference { value, kind });
        self
    }
}

/// Instances of one split, in input order.
pub fn split_of(instances: &[Instance], split: Split) -> Vec<Instance> {
    instances
        .iter()
        .filter(|i| i.split == split)
        .cloned()
        .collect()
}

macro_rules! str_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::InvalidParameter(format!(
                        concat!("unknown ", $what, " '{}'"),
                        other
                    ))),
                }
            }
        }
    };
}

str_enum!(Split, "split", Split::Train => "train", Split::Val => "val", Split::Test => "test");
str_enum!(
    RefKind,
    "reference kind",
    RefKind::Exact => "exact",
    RefKind::Bound => "bound",
    RefKind::BestFound => "best-found",
);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for s in [Split::Train, Split::Val, Split::Test] {
            assert_eq!(s.as_str().parse::<Split>().unwrap(), s);
        }
        for k in [RefKind::Exact, RefKind::Bound, RefKind::BestFound] {
            assert_eq!(k.to_string().parse::<RefKind>().unwrap(), k);
        }
        assert!("holdout".parse::<Split>().is_err());
    }

    #[test]
    fn split_filter_keeps_order() {
        let g = Graph::empty(1);
        let all = vec![
            Instance::new("a", g.clone(), Split::Test),
            Instance::new("b", g.clone(), Split::Train),
            Instance::new("c", g, Split::Test),
        ];
        let ids: Vec<_> = split_of(&all, Split::Test)
            .into_iter()
            .map(|i| i.id)
            .collect();
        assert_eq!(ids, ["a", "c"]);
    }
}
