//! Text formats: graph files, dataset manifests, checkpoints and CSV reports.
//!
//! Graph files are DIMACS-like with 0-indexed nodes:
//!
//! ```text
//! c optional comment
//! p 3 2
//! e 0 1
//! e 1 2
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::dataset::{Instance, RefKind, Reference, Split};
use crate::error::{Error, Result};
use crate::eval::RunRecord;
use crate::gin::{GinConfig, ModelParams};
use crate::graph::Graph;
use crate::problems::ProblemKind;
use crate::tensor::Tensor;
use crate::train::DynamicsRecord;

pub const MANIFEST_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    tok: Option<&str>,
    what: &str,
) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(path, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} '{tok}'")))
}

pub fn graph_to_string(g: &Graph) -> String {
    let mut s = format!("p {} {}\n", g.node_count(), g.edge_count());
    for &(u, v) in g.edges() {
        s.push_str(&format!("e {u} {v}\n"));
    }
    s
}

/// Parses graph text; `path` is used only for diagnostics.
pub fn parse_graph(text: &str, path: &Path) -> Result<Graph> {
    let mut header: Option<(usize, usize)> = None;
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            None | Some("c") => continue,
            Some("p") => {
                if header.is_some() {
                    return Err(parse_err(path, line, "duplicate header"));
                }
                let n = field(path, line, toks.next(), "node count")?;
                let m = field(path, line, toks.next(), "edge count")?;
                header = Some((n, m));
            }
            Some("e") => {
                let Some((n, _)) = header else {
                    return Err(parse_err(path, line, "edge before header"));
                };
                let u: usize = field(path, line, toks.next(), "endpoint")?;
                let v: usize = field(path, line, toks.next(), "endpoint")?;
                if u >= n || v >= n {
                    return Err(parse_err(
                        path,
                        line,
                        format!("endpoint out of range for n={n}"),
                    ));
                }
                edges.push((u, v));
            }
            Some(other) => return Err(parse_err(path, line, format!("unknown record '{other}'"))),
        }
        if toks.next().is_some() {
            return Err(parse_err(path, line, "trailing fields"));
        }
    }
    let (n, m) = header.ok_or_else(|| parse_err(path, 0, "missing 'p' header"))?;
    if edges.len() != m {
        return Err(parse_err(
            path,
            0,
            format!("header declares {m} edges, found {}", edges.len()),
        ));
    }
    Graph::from_edge_list(n, &edges)
}

pub fn save_graph(path: &Path, g: &Graph) -> Result<()> {
    fs::write(path, graph_to_string(g))?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<Graph> {
    parse_graph(&fs::read_to_string(path)?, path)
}

/// Loads a plain edge list with arbitrary node labels: one `a b` pair per
/// line, separated by whitespace or a comma; `#` and `%` start comments.
/// Returns the graph and the label of each dense node id.
pub fn load_edge_list(path: &Path) -> Result<(Graph, Vec<String>)> {
    let text = fs::read_to_string(path)?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut edges = Vec::new();
    let mut intern = |label: &str| {
        *ids.entry(label.to_string()).or_insert_with(|| {
            labels.push(label.to_string());
            labels.len() - 1
        })
    };
    for (i, raw) in text.lines().enumerate() {
        let body = raw.split(['#', '%']).next().unwrap_or("");
        let toks: Vec<&str> = body
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        match toks.as_slice() {
            [] => {}
            [a, b] | [a, b, _] => {
                let (u, v) = (intern(a), intern(b));
                edges.push((u, v));
            }
            _ => return Err(parse_err(path, i + 1, "expected two node labels")),
        }
    }
    let g = Graph::from_edge_list(labels.len(), &edges)?;
    Ok((g, labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub references: Vec<(ProblemKind, Reference)>,
}

impl ManifestEntry {
    pub fn reference(&self, kind: ProblemKind) -> Option<Reference> {
        self.references
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, r)| *r)
    }

    /// Sets or replaces the reference for `kind`.
    pub fn set_reference(&mut self, kind: ProblemKind, r: Reference) {
        match self.references.iter_mut().find(|(k, _)| *k == kind) {
            Some(slot) => slot.1 = r,
            None => self.references.push((kind, r)),
        }
    }
}

/// Dataset index: one line per graph file, `file split [problem:value:kind ...]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("egn-manifest {MANIFEST_VERSION}\n");
        for e in &self.entries {
            s.push_str(&format!("{} {}", e.file, e.split));
            for (kind, r) in &e.references {
                s.push_str(&format!(" {kind}:{}:{}", r.value, r.kind));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let version = loop {
            match lines.next() {
                None => return Err(parse_err(path, 0, "empty manifest")),
                Some((_, l)) if l.trim().is_empty() || l.starts_with('#') => continue,
                Some((i, l)) => {
                    let mut toks = l.split_whitespace();
                    if toks.next() != Some("egn-manifest") {
                        return Err(parse_err(path, i + 1, "expected 'egn-manifest <version>'"));
                    }
                    break field::<u32>(path, i + 1, toks.next(), "version")?;
                }
            }
        };
        if version > MANIFEST_VERSION {
            return Err(Error::Version {
                what: "manifest",
                found: version,
                supported: MANIFEST_VERSION,
            });
        }
        let mut entries = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let mut toks = raw.split_whitespace();
            let file = toks.next().unwrap().to_string();
            let split: Split = field(path, line, toks.next(), "split")?;
            let mut references = Vec::new();
            for tok in toks {
                let parts: Vec<&str> = tok.split(':').collect();
                let [kind, value, rkind] = parts.as_slice() else {
                    return Err(parse_err(path, line, format!("bad reference '{tok}'")));
                };
                let kind: ProblemKind = field(path, line, Some(kind), "problem")?;
                let value: f64 = field(path, line, Some(value), "reference value")?;
                let rkind: RefKind = field(path, line, Some(rkind), "reference kind")?;
                references.push((kind, Reference { value, kind: rkind }));
            }
            entries.push(ManifestEntry {
                file,
                split,
                references,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), self.to_text())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        Manifest::parse(&fs::read_to_string(&path)?, &path)
    }
}

/// Reads every graph listed in `dir`'s manifest, attaching references for
/// `kind`. Instance ids are the file names.
pub fn load_dataset(dir: &Path, kind: ProblemKind) -> Result<Vec<Instance>> {
    let manifest = Manifest::load(dir)?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let graph = load_graph(&dir.join(&e.file))?;
            Ok(Instance {
                id: e.file.clone(),
                graph,
                split: e.split,
                reference: e.reference(kind),
            })
        })
        .collect()
}

/// Serializes parameters; values are written with 17 significant digits so
/// every `f64` survives a round trip.
pub fn checkpoint_to_string(params: &ModelParams, problem: Option<ProblemKind>) -> String {
    let c = &params.config;
    let mut s = format!("egn-checkpoint {CHECKPOINT_VERSION}\n");
    if let Some(p) = problem {
        s.push_str(&format!("problem {p}\n"));
    }
    s.push_str(&format!(
        "layers {}\nhidden_dim {}\nmlp_depth {}\ninput_dim {}\nepsilon {:.16e}\nfingerprint {}\ntensors {}\n",
        c.layers,
        c.hidden_dim,
        c.mlp_depth,
        c.input_dim,
        c.epsilon,
        params.fingerprint,
        params.tensors.len()
    ));
    for t in &params.tensors {
        s.push_str(&format!("tensor {} {}\n", t.rows(), t.cols()));
        for row in t.data().chunks(t.cols().max(1)) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
    }
    s
}

/// Checkpoint contents: parameters and the problem they were trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub problem: Option<ProblemKind>,
}

struct Lines<'a> {
    path: &'a Path,
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    /// Next non-blank line as (line number, tokens).
    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        while self.pos < self.lines.len() && self.lines[self.pos].trim().is_empty() {
            self.pos += 1;
        }
        if self.pos >= self.lines.len() {
            return Err(parse_err(
                self.path,
                self.pos + 1,
                format!("unexpected end of file, wanted {what}"),
            ));
        }
        self.pos += 1;
        Ok((
            self.pos,
            self.lines[self.pos - 1].split_whitespace().collect(),
        ))
    }

    fn peek_key(&self) -> Option<&'a str> {
        self.lines[self.pos..]
            .iter()
            .find(|l| !l.trim().is_empty())
            .and_then(|l| l.split_whitespace().next())
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (line, toks) = self.next(key)?;
        if toks.len() != 2 || toks[0] != key {
            return Err(parse_err(
                self.path,
                line,
                format!("expected '{key} <value>'"),
            ));
        }
        field(self.path, line, Some(toks[1]), key)
    }
}

pub fn parse_checkpoint(text: &str, path: &Path) -> Result<Checkpoint> {
    let mut rd = Lines {
        path,
        lines: text.lines().collect(),
        pos: 0,
    };
    let (line, head) = rd.next("header")?;
    if head.first() != Some(&"egn-checkpoint") || head.len() != 2 {
        return Err(parse_err(path, line, "expected 'egn-checkpoint <version>'"));
    }
    let version: u32 = field(path, line, Some(head[1]), "version")?;
    if version > CHECKPOINT_VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let problem = if rd.peek_key() == Some("problem") {
        Some(rd.keyed::<ProblemKind>("problem")?)
    } else {
        None
    };
    let config = GinConfig {
        layers: rd.keyed("layers")?,
        hidden_dim: rd.keyed("hidden_dim")?,
        mlp_depth: rd.keyed("mlp_depth")?,
        input_dim: rd.keyed("input_dim")?,
        epsilon: rd.keyed("epsilon")?,
    };
    let fingerprint: u64 = rd.keyed("fingerprint")?;
    let count: usize = rd.keyed("tensors")?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let (line, toks) = rd.next("tensor header")?;
        if toks.len() != 3 || toks[0] != "tensor" {
            return Err(parse_err(path, line, "expected 'tensor <rows> <cols>'"));
        }
        let rows: usize = field(path, line, Some(toks[1]), "rows")?;
        let cols: usize = field(path, line, Some(toks[2]), "cols")?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (line, cells) = rd.next("tensor row")?;
            if cells.len() != cols {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {cols} values, found {}", cells.len()),
                ));
            }
            for c in cells {
                data.push(field::<f64>(path, line, Some(c), "value")?);
            }
        }
        tensors.push(Tensor::new(rows, cols, data)?);
    }
    let params = ModelParams {
        config,
        fingerprint,
        tensors,
    };
    params.check()?;
    Ok(Checkpoint { params, problem })
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    problem: Option<ProblemKind>,
) -> Result<()> {
    fs::write(path, checkpoint_to_string(params, problem))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&fs::read_to_string(path)?, path)
}

pub const CSV_HEADER: [&str; 15] = [
    "instance_id",
    "n",
    "m",
    "problem",
    "method",
    "trials",
    "apr",
    "ref_kind",
    "objective",
    "feasible",
    "loss_before",
    "loss_after",
    "time_ms_forward",
    "time_ms_round",
    "time_ms_finetune",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per record under the fixed header.
pub fn write_records<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.instance_id.clone(),
            r.n.to_string(),
            r.m.to_string(),
            r.problem.to_string(),
            r.method.clone(),
            r.trials.to_string(),
            opt(r.apr),
            opt(r.ref_kind),
            opt(r.objective),
            r.feasible.to_string(),
            opt(r.loss_before),
            opt(r.loss_after),
            r.time_ms_forward.to_string(),
            r.time_ms_round.to_string(),
            r.time_ms_finetune.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    write_records(fs::File::create(path)?, records)
}

pub fn write_dynamics<W: Write>(out: W, rows: &[DynamicsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "train_loss_pre_adapt",
        "train_loss_post_adapt",
        "val_loss",
        "val_apr",
    ])?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            opt(r.train_loss_pre_adapt),
            opt(r.train_loss_post_adapt),
            opt(r.val_loss),
            opt(r.val_apr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dynamics(path: &Path, rows: &[DynamicsRecord]) -> Result<()> {
    write_dynamics(fs::File::create(path)?, rows)
}

/// Writes `instances` as graph files plus a manifest into `dir`.
pub fn save_dataset(
    dir: &Path,
    instances: &[Instance],
    kind: Option<ProblemKind>,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest::default();
    for inst in instances {
        save_graph(&dir.join(&inst.id), &inst.graph)?;
        let mut entry = ManifestEntry {
            file: inst.id.clone(),
            split: inst.split,
            references: Vec::new(),
        };
        if let (Some(k), Some(r)) = (kind, inst.reference) {
            entry.set_reference(k, r);
        }
        manifest.entries.push(entry);
    }
    manifest.save(dir)?;
    Ok(manifest)
}

/// Resolves `file` relative to `dir` unless it is absolute.
pub fn resolve(dir: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::gen_er;
    use crate::gin::{forward, init_params, FeatureInit};
    use proptest::prelude::*;

    fn p() -> PathBuf {
        PathBuf::from("mem")
    }

    #[test]
    fn graph_round_trip_k4() {
        let g = Graph::complete(4);
        let back = parse_graph(&graph_to_string(&g), &p()).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back, g);
    }

    #[test]
    fn graph_diagnostics() {
        let cases = [
            ("e 0 1\n", 1),
            ("p 2 1\ne 0 5\n", 2),
            ("c hi\np 2 1\nx 0 1\n", 3),
            ("p 3 1\ne 0 1 2\n", 2),
            ("p 3 1\ne 0 q\n", 2),
        ];
        for (text, want) in cases {
            match parse_graph(text, &p()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(parse_graph("p 3 2\ne 0 1\n", &p()).is_err());
    }

    #[test]
    fn edge_list_labels() {
        let dir = tempdir();
        let f = dir.join("social.txt");
        fs::write(&f, "# comment\nalice bob\nbob,carol\n\ncarol alice 0.5\n").unwrap();
        let (g, labels) = load_edge_list(&f).unwrap();
        assert_eq!(labels, ["alice", "bob", "carol"]);
        assert_eq!(g, Graph::complete(3));
    }

    fn tempdir() -> PathBuf {
        use std::sync::atomic::{AtomicUsize, Ordering};
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let d = std::env::temp_dir().join(format!(
            "egn-io-{}-{}",
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::SeqCst)
        ));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn manifest_round_trip_and_version() {
        let mut e = ManifestEntry {
            file: "g0.txt".into(),
            split: Split::Val,
            references: vec![],
        };
        e.set_reference(
            ProblemKind::MaxIndependentSet,
            Reference {
                value: 0.1 + 0.2,
                kind: RefKind::Exact,
            },
        );
        e.set_reference(
            ProblemKind::MinVertexCover,
            Reference {
                value: 7.0,
                kind: RefKind::Bound,
            },
        );
        let m = Manifest {
            entries: vec![
                e,
                ManifestEntry {
                    file: "g1.txt".into(),
                    split: Split::Test,
                    references: vec![],
                },
            ],
        };
        let back = Manifest::parse(&m.to_text(), &p()).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.entries[0]
                .reference(ProblemKind::MaxIndependentSet)
                .unwrap()
                .value,
            0.1 + 0.2
        );
        assert!(matches!(
            Manifest::parse("egn-manifest 2\n", &p()),
            Err(Error::Version { found: 2, .. })
        ));
        assert!(matches!(
            Manifest::parse("egn-manifest 1\ng.txt train mis:x:exact\n", &p()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = GinConfig {
            layers: 2,
            hidden_dim: 5,
            mlp_depth: 2,
            input_dim: 1,
            epsilon: 0.0,
        };
        let mut params = init_params(&cfg, 3).unwrap();
        params.tensors[1] =
            Tensor::new(1, 5, vec![1e-300, -0.1, 1.0 / 3.0, 12.345, 5e-324]).unwrap();
        let text = checkpoint_to_string(&params, Some(ProblemKind::MaxClique));
        let back = parse_checkpoint(&text, &p()).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.problem, Some(ProblemKind::MaxClique));
        let g = gen_er(10, 0.4, 1).unwrap();
        let a = forward(&params, &g, &FeatureInit::SingleNodeSeed(2)).unwrap();
        let b = forward(&back.params, &g, &FeatureInit::SingleNodeSeed(2)).unwrap();
        assert_eq!(a, b);
        let plain = checkpoint_to_string(&params, None);
        assert_eq!(parse_checkpoint(&plain, &p()).unwrap().problem, None);
    }

    #[test]
    fn checkpoint_errors() {
        let cfg = GinConfig {
            layers: 1,
            hidden_dim: 2,
            mlp_depth: 1,
            input_dim: 1,
            epsilon: 0.0,
        };
        let text = checkpoint_to_string(&init_params(&cfg, 1).unwrap(), None);
        let future = text.replacen("egn-checkpoint 1", "egn-checkpoint 9", 1);
        assert!(matches!(
            parse_checkpoint(&future, &p()),
            Err(Error::Version { found: 9, .. })
        ));
        let bad_fp: String = text
            .lines()
            .map(|l| {
                if l.starts_with("fingerprint") {
                    "fingerprint 12345"
                } else {
                    l
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(
            parse_checkpoint(&bad_fp, &p()),
            Err(Error::FingerprintMismatch { .. })
        ));
        let truncated: String = text.lines().take(9).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            parse_checkpoint(&truncated, &p()),
            Err(Error::Parse { .. })
        ));
        let garbled = text.replacen("hidden_dim 2", "hidden_dim two", 1);
        assert!(matches!(
            parse_checkpoint(&garbled, &p()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempdir();
        let insts: Vec<Instance> = (0..3)
            .map(|i| {
                Instance::new(
                    format!("g{i}.txt"),
                    gen_er(8, 0.5, i).unwrap(),
                    Split::Train,
                )
                .with_reference(3.0 + i as f64, RefKind::Exact)
            })
            .collect();
        save_dataset(&dir, &insts, Some(ProblemKind::MaxIndependentSet)).unwrap();
        assert_eq!(
            load_dataset(&dir, ProblemKind::MaxIndependentSet).unwrap(),
            insts
        );
        let other = load_dataset(&dir, ProblemKind::MaxClique).unwrap();
        assert!(other.iter().all(|i| i.reference.is_none()));
    }

    #[test]
    fn csv_header_is_fixed() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            "instance_id,n,m,problem,method,trials,apr,ref_kind,objective,feasible,loss_before,loss_after,time_ms_forward,time_ms_round,time_ms_finetune"
        );
    }

    proptest! {
        #[test]
        fn random_graphs_round_trip(n in 0usize..40, p_edge in 0.0f64..1.0, seed in 0u64..500) {
            let g = gen_er(n, p_edge, seed).unwrap();
            prop_assert_eq!(parse_graph(&graph_to_string(&g), &p()).unwrap(), g);
        }

        #[test]
        fn floats_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = format!("{v:.16e}");
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
