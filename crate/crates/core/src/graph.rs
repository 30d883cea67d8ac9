//! The bipartite user-item interaction graph.
//!
//! Users and items share one node index space: user `u` is node `u` and item
//! `j` is node `num_users + j`. Every interaction contributes a user→item and
//! an item→user adjacency entry.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::SparseMatrix;

/// One observed user-item interaction, in contiguous indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub user: usize,
    pub item: usize,
}

impl Edge {
    pub fn new(user: usize, item: usize) -> Self {
        Self { user, item }
    }
}

/// External ids and optional ratings. Ratings are metadata only; training
/// treats every interaction as implicit feedback.
#[derive(Clone, Debug, Default)]
pub struct Catalog {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub ratings: BTreeMap<Edge, f64>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(users: Vec<String>, items: Vec<String>, ratings: BTreeMap<Edge, f64>) -> Self {
        let user_index = users.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let item_index = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self {
            users,
            items,
            ratings,
            user_index,
            item_index,
        }
    }

    /// Identity ids `0..n` for generated data.
    pub fn numbered(num_users: usize, num_items: usize) -> Self {
        Self::new(
            (0..num_users).map(|i| i.to_string()).collect(),
            (0..num_items).map(|i| i.to_string()).collect(),
            BTreeMap::new(),
        )
    }

    pub fn user(&self, id: &str) -> Result<usize> {
        self.user_index.get(id).copied().ok_or_else(|| Error::Lookup {
            kind: "user",
            id: id.to_string(),
        })
    }

    pub fn item(&self, id: &str) -> Result<usize> {
        self.item_index.get(id).copied().ok_or_else(|| Error::Lookup {
            kind: "item",
            id: id.to_string(),
        })
    }
}

/// Immutable bipartite graph with unified-index adjacency.
#[derive(Clone, Debug)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    edges: Vec<Edge>,
    indptr: Vec<usize>,
    neighbors: Vec<usize>,
    catalog: Arc<Catalog>,
}

impl InteractionGraph {
    /// Builds a graph; edges may come in any order but must be unique and in
    /// range.
    pub fn new(
        num_users: usize,
        num_items: usize,
        mut edges: Vec<Edge>,
        catalog: Arc<Catalog>,
    ) -> Result<Self> {
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Contract(format!("duplicate edge {:?}", w[0])));
            }
        }
        if let Some(e) = edges
            .iter()
            .find(|e| e.user >= num_users || e.item >= num_items)
        {
            return Err(Error::Contract(format!(
                "edge {e:?} outside {num_users} users x {num_items} items"
            )));
        }
        let n = num_users + num_items;
        let mut degree = vec![0usize; n];
        for e in &edges {
            degree[e.user] += 1;
            degree[num_users + e.item] += 1;
        }
        let mut indptr = vec![0usize; n + 1];
        for k in 0..n {
            indptr[k + 1] = indptr[k] + degree[k];
        }
        let mut fill = indptr.clone();
        let mut neighbors = vec![0usize; indptr[n]];
        // Edges are sorted by (user, item), so user rows come out sorted and
        // item rows are filled in increasing user order.
        for e in &edges {
            let i = num_users + e.item;
            neighbors[fill[e.user]] = i;
            fill[e.user] += 1;
            neighbors[fill[i]] = e.user;
            fill[i] += 1;
        }
        Ok(Self {
            num_users,
            num_items,
            edges,
            indptr,
            neighbors,
            catalog,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sorted by `(user, item)`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn item_node(&self, item: usize) -> usize {
        self.num_users + item
    }

    pub fn degree(&self, node: usize) -> usize {
        self.indptr[node + 1] - self.indptr[node]
    }

    /// Sorted neighbor nodes of `node` in unified indexing.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.indptr[node]..self.indptr[node + 1]]
    }

    pub fn contains(&self, e: Edge) -> bool {
        self.edges.binary_search(&e).is_ok()
    }

    /// Items of `user`, ascending.
    pub fn items_of(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors(user).iter().map(move |&n| n - self.num_users)
    }
}

/// Line format accepted by [`ingest`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    /// `user<TAB>item[<TAB>rating]`.
    Tsv,
    /// Fields separated by any run of whitespace.
    Whitespace,
}

/// Result of reading an interaction file.
#[derive(Debug)]
pub struct Ingested {
    pub graph: InteractionGraph,
    pub lines: usize,
    pub duplicates: usize,
}

struct RawRecord {
    user: String,
    item: String,
    rating: Option<f64>,
}

fn parse_line(line: &str, format: InputFormat) -> std::result::Result<RawRecord, String> {
    let fields: Vec<&str> = match format {
        InputFormat::Tsv => line.split('\t').collect(),
        InputFormat::Whitespace => line.split_whitespace().collect(),
    };
    if !(2..=3).contains(&fields.len()) {
        return Err(format!("expected 2 or 3 fields, found {}", fields.len()));
    }
    let (user, item) = (fields[0].trim(), fields[1].trim());
    if user.is_empty() || item.is_empty() {
        return Err("empty id".into());
    }
    let rating = match fields.get(2) {
        Some(r) => Some(
            r.trim()
                .parse::<f64>()
                .map_err(|_| format!("rating `{}` is not a number", r.trim()))?,
        ),
        None => None,
    };
    Ok(RawRecord {
        user: user.to_string(),
        item: item.to_string(),
        rating,
    })
}

/// Contiguous indices for a set of external ids: numeric order when every id
/// is an unsigned integer, first-appearance order otherwise.
fn index_ids(seen: Vec<String>) -> Vec<String> {
    let mut uniq = Vec::new();
    let mut set = BTreeSet::new();
    for s in seen {
        if set.insert(s.clone()) {
            uniq.push(s);
        }
    }
    if uniq.iter().all(|s| s.parse::<u64>().is_ok()) {
        uniq.sort_by_key(|s| s.parse::<u64>().expect("checked"));
    }
    uniq
}

fn read_records(path: &Path, format: InputFormat) -> Result<(Vec<RawRecord>, usize)> {
    let file = File::open(path)?;
    let mut records = Vec::new();
    let mut lines = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        lines += 1;
        let rec = parse_line(trimmed, format).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        records.push(rec);
    }
    Ok((records, lines))
}

/// Reads an interaction file into a graph with contiguous ids.
/// Duplicate interactions are dropped and counted.
pub fn ingest(path: &Path, format: InputFormat) -> Result<Ingested> {
    let (records, lines) = read_records(path, format)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    let users = index_ids(records.iter().map(|r| r.user.clone()).collect());
    let items = index_ids(records.iter().map(|r| r.item.clone()).collect());
    let catalog = Catalog::new(users, items, BTreeMap::new());
    let mut edges = BTreeSet::new();
    let mut ratings = BTreeMap::new();
    let mut duplicates = 0;
    for r in &records {
        let e = Edge::new(catalog.user(&r.user)?, catalog.item(&r.item)?);
        if !edges.insert(e) {
            duplicates += 1;
            continue;
        }
        if let Some(v) = r.rating {
            ratings.insert(e, v);
        }
    }
    let catalog = Catalog { ratings, ..catalog };
    let graph = InteractionGraph::new(
        catalog.users.len(),
        catalog.items.len(),
        edges.into_iter().collect(),
        Arc::new(catalog),
    )?;
    Ok(Ingested {
        graph,
        lines,
        duplicates,
    })
}

/// Train/validation/test partition of a graph's edges.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<Edge>,
    pub valid: Vec<Edge>,
    pub test: Vec<Edge>,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub catalog: Arc<Catalog>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitSidecar {
    seed: u64,
    ratios: [f64; 3],
    counts: [usize; 3],
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.70, 0.05, 0.25];

/// Uniform per-edge split, deterministic in `seed`.
///
/// Validation and test sizes are `⌊ratio·|E|⌋`; training takes the rest.
/// A user whose edges all landed outside training gets one of them swapped
/// with a training edge of a user that has at least two, which keeps the
/// partition sizes unchanged.
pub fn split(g: &InteractionGraph, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite())
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let n = g.num_edges();
    let mut order: Vec<Edge> = g.edges().to_vec();
    let mut rng = stream_rng(seed, Stream::Split, 0);
    order.shuffle(&mut rng);

    let n_valid = (ratios[1] * n as f64).floor() as usize;
    let n_test = (ratios[2] * n as f64).floor() as usize;
    let n_train = n - n_valid - n_test;
    let mut train = order[..n_train].to_vec();
    let mut rest = order[n_train..].to_vec();

    let mut train_count = vec![0usize; g.num_users()];
    for e in &train {
        train_count[e.user] += 1;
    }
    let mut donor_cursor = 0;
    for pos in 0..rest.len() {
        let e = rest[pos];
        if train_count[e.user] > 0 {
            continue;
        }
        // Find a training edge whose user can spare it.
        while donor_cursor < train.len() && train_count[train[donor_cursor].user] < 2 {
            donor_cursor += 1;
        }
        if donor_cursor == train.len() {
            break;
        }
        let donor = train[donor_cursor];
        train_count[donor.user] -= 1;
        train_count[e.user] += 1;
        train[donor_cursor] = e;
        rest[pos] = donor;
        donor_cursor = 0;
    }
    let valid = rest[..n_valid].to_vec();
    let test = rest[n_valid..].to_vec();
    Ok(DatasetSplit {
        num_users: g.num_users(),
        num_items: g.num_items(),
        train,
        valid,
        test,
        seed,
        ratios,
        catalog: Arc::clone(g.catalog()),
    })
}

impl DatasetSplit {
    pub fn train_graph(&self) -> Result<InteractionGraph> {
        InteractionGraph::new(
            self.num_users,
            self.num_items,
            self.train.clone(),
            Arc::clone(&self.catalog),
        )
    }

    /// All edges of the three partitions, sorted.
    pub fn merged(&self) -> Vec<Edge> {
        let mut all: Vec<Edge> = self
            .train
            .iter()
            .chain(&self.valid)
            .chain(&self.test)
            .copied()
            .collect();
        all.sort_unstable();
        all
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.train.len(), self.valid.len(), self.test.len()]
    }

    /// Writes `train.tsv`, `valid.tsv`, `test.tsv` with external ids and
    /// `split.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, edges) in [
            ("train.tsv", &self.train),
            ("valid.tsv", &self.valid),
            ("test.tsv", &self.test),
        ] {
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            let mut sorted = edges.clone();
            sorted.sort_unstable();
            for e in sorted {
                let (u, i) = (&self.catalog.users[e.user], &self.catalog.items[e.item]);
                match self.catalog.ratings.get(&e) {
                    Some(r) => writeln!(w, "{u}\t{i}\t{r}")?,
                    None => writeln!(w, "{u}\t{i}")?,
                }
            }
            w.flush()?;
        }
        let sidecar = SplitSidecar {
            seed: self.seed,
            ratios: self.ratios,
            counts: self.counts(),
        };
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::Contract(e.to_string()))?;
        fs::write(dir.join("split.json"), json + "\n")?;
        Ok(())
    }

    /// Reads a directory written by [`DatasetSplit::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let paths: Vec<PathBuf> = ["train.tsv", "valid.tsv", "test.tsv"]
            .iter()
            .map(|n| dir.join(n))
            .collect();
        let mut parts = Vec::new();
        for p in &paths {
            if !p.exists() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("missing split file {}", p.display()),
                )));
            }
            parts.push(read_records(p, InputFormat::Tsv)?.0);
        }
        if parts[0].is_empty() {
            return Err(Error::EmptyDataset(paths[0].clone()));
        }
        let all = parts.iter().flatten();
        let users = index_ids(all.clone().map(|r| r.user.clone()).collect());
        let items = index_ids(all.map(|r| r.item.clone()).collect());
        let mut catalog = Catalog::new(users, items, BTreeMap::new());
        let mut seen = BTreeSet::new();
        let mut lists: Vec<Vec<Edge>> = Vec::new();
        for (records, path) in parts.iter().zip(&paths) {
            let mut list = Vec::with_capacity(records.len());
            for (line, r) in records.iter().enumerate() {
                let e = Edge::new(catalog.user(&r.user)?, catalog.item(&r.item)?);
                if !seen.insert(e) {
                    return Err(Error::Parse {
                        path: path.clone(),
                        line: line + 1,
                        msg: "interaction repeated across split files".into(),
                    });
                }
                if let Some(v) = r.rating {
                    catalog.ratings.insert(e, v);
                }
                list.push(e);
            }
            lists.push(list);
        }
        let (seed, ratios) = match fs::read_to_string(dir.join("split.json")) {
            Ok(text) => {
                let s: SplitSidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
                    path: dir.join("split.json"),
                    line: e.line(),
                    msg: e.to_string(),
                })?;
                (s.seed, s.ratios)
            }
            Err(_) => (0, DEFAULT_SPLIT),
        };
        let test = lists.pop().expect("three parts");
        let valid = lists.pop().expect("three parts");
        let train = lists.pop().expect("three parts");
        Ok(Self {
            num_users: catalog.users.len(),
            num_items: catalog.items.len(),
            train,
            valid,
            test,
            seed,
            ratios,
            catalog: Arc::new(catalog),
        })
    }

    /// Adds `⌊ratio·|E_train|⌋` uniformly random user-item pairs that appear
    /// in no partition to the training edges.
    pub fn perturb_noise(&self, ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Config(format!("noise ratio {ratio} outside [0, 1]")));
        }
        let count = (ratio * self.train.len() as f64).floor() as usize;
        let existing: BTreeSet<Edge> = self.merged().into_iter().collect();
        let capacity = self.num_users * self.num_items;
        let available = capacity - existing.len();
        if count > available {
            return Err(Error::Saturated {
                requested: count,
                available,
            });
        }
        let mut rng = stream_rng(seed, Stream::Perturb, 0);
        let mut added = BTreeSet::new();
        // Rejection sampling is fine while the graph is far from complete;
        // fall back to enumeration otherwise.
        if count * 2 < available {
            while added.len() < count {
                let e = Edge::new(
                    rng.gen_range(0..self.num_users),
                    rng.gen_range(0..self.num_items),
                );
                if !existing.contains(&e) {
                    added.insert(e);
                }
            }
        } else {
            let mut free: Vec<Edge> = (0..self.num_users)
                .flat_map(|u| (0..self.num_items).map(move |i| Edge::new(u, i)))
                .filter(|e| !existing.contains(e))
                .collect();
            free.shuffle(&mut rng);
            added.extend(free.into_iter().take(count));
        }
        let mut out = self.clone();
        out.train.extend(added);
        Ok(out)
    }

    /// Removes `⌊drop_ratio·|E_train|⌋` uniformly random training edges.
    pub fn perturb_sparsify(&self, drop_ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_ratio) {
            return Err(Error::Config(format!(
                "drop ratio {drop_ratio} outside [0, 1)"
            )));
        }
        let count = (drop_ratio * self.train.len() as f64).floor() as usize;
        let mut rng = stream_rng(seed, Stream::Perturb, 1);
        let dropped: BTreeSet<usize> =
            rand::seq::index::sample(&mut rng, self.train.len(), count)
                .into_iter()
                .collect();
        let mut out = self.clone();
        out.train = self
            .train
            .iter()
            .enumerate()
            .filter(|(i, _)| !dropped.contains(i))
            .map(|(_, &e)| e)
            .collect();
        Ok(out)
    }
}

/// Symmetric normalized adjacency over all `num_users + num_items` nodes
/// for an edge subset, with weight `1/sqrt(d_k d_k')` where the degrees are
/// counted within the subset.
pub fn normalized_adjacency(
    num_users: usize,
    num_items: usize,
    edges: &[Edge],
) -> Result<SparseMatrix> {
    if edges.is_empty() {
        return Err(Error::Contract("normalized adjacency of an empty edge set".into()));
    }
    let n = num_users + num_items;
    let mut degree = vec![0usize; n];
    for e in edges {
        degree[e.user] += 1;
        degree[num_users + e.item] += 1;
    }
    let mut entries = Vec::with_capacity(2 * edges.len());
    for e in edges {
        let (u, i) = (e.user, num_users + e.item);
        let w = 1.0 / ((degree[u] * degree[i]) as f64).sqrt();
        entries.push((u, i, w));
        entries.push((i, u, w));
    }
    SparseMatrix::from_triplets(n, n, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(num_users: usize, num_items: usize, edges: &[(usize, usize)]) -> InteractionGraph {
        InteractionGraph::new(
            num_users,
            num_items,
            edges.iter().map(|&(u, i)| Edge::new(u, i)).collect(),
            Arc::new(Catalog::numbered(num_users, num_items)),
        )
        .unwrap()
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    #[test]
    fn ingest_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.tsv", "# header\nu1\ti1\nu1\ti2\nu2\ti1\n");
        let got = ingest(&p, InputFormat::Tsv).unwrap();
        assert_eq!(got.graph.num_users(), 2);
        assert_eq!(got.graph.num_items(), 2);
        assert_eq!(got.graph.num_edges(), 3);
        assert_eq!(got.duplicates, 0);
    }

    #[test]
    fn ingest_reports_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.tsv", "u1\ti1\t5\nu1\ti2\nu1\ti1\t3\n");
        let got = ingest(&p, InputFormat::Tsv).unwrap();
        assert_eq!(got.graph.num_edges(), 2);
        assert_eq!(got.duplicates, 1);
        assert_eq!(got.graph.catalog().ratings.get(&Edge::new(0, 0)), Some(&5.0));
    }

    #[test]
    fn ingest_numeric_ids_keep_their_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.txt", "2 10\n0 3\n1 10\n");
        let got = ingest(&p, InputFormat::Whitespace).unwrap();
        let cat = got.graph.catalog();
        assert_eq!(cat.users, vec!["0", "1", "2"]);
        assert_eq!(cat.items, vec!["3", "10"]);
    }

    #[test]
    fn ingest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.tsv", "u1\ti1\nu2\n");
        match ingest(&p, InputFormat::Tsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(dir.path(), "rating.tsv", "u1\ti1\tgood\n");
        assert!(matches!(ingest(&p, InputFormat::Tsv), Err(Error::Parse { line: 1, .. })));
        let p = write(dir.path(), "empty.tsv", "# nothing\n\n");
        assert!(matches!(ingest(&p, InputFormat::Tsv), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn adjacency_is_symmetric_with_matching_degrees() {
        let g = graph(3, 3, &[(0, 0), (0, 1), (1, 1), (2, 2), (2, 0)]);
        let mut total = 0;
        for k in 0..g.num_nodes() {
            total += g.degree(k);
            for &m in g.neighbors(k) {
                assert!(g.neighbors(m).contains(&k));
            }
        }
        assert_eq!(total, 2 * g.num_edges());
    }

    #[test]
    fn split_exact_sizes_and_determinism() {
        let edges: Vec<(usize, usize)> = (0..100).map(|k| (k % 10, k / 10)).collect();
        let g = graph(10, 10, &edges);
        let s = split(&g, DEFAULT_SPLIT, 5).unwrap();
        assert_eq!(s.counts(), [70, 5, 25]);
        let again = split(&g, DEFAULT_SPLIT, 5).unwrap();
        assert_eq!(s.train, again.train);
        assert_eq!(s.test, again.test);
        assert_eq!(s.merged(), g.edges().to_vec());
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let g = graph(1, 1, &[(0, 0)]);
        assert!(matches!(split(&g, [0.5, 0.5, 0.5], 0), Err(Error::Config(_))));
        assert!(matches!(split(&g, [1.0, 0.0, 0.0], 0), Err(Error::Config(_))));
    }

    #[test]
    fn split_keeps_a_training_edge_per_user() {
        // Many users with a single edge each plus one heavy user.
        let mut edges: Vec<(usize, usize)> = (0..30).map(|u| (u, u % 7)).collect();
        edges.extend((0..40).map(|i| (30, i)));
        let g = graph(31, 40, &edges);
        for seed in 0..20 {
            let s = split(&g, DEFAULT_SPLIT, seed).unwrap();
            let mut has = [false; 31];
            for e in &s.train {
                has[e.user] = true;
            }
            assert!(has.iter().all(|&h| h), "seed {seed}");
            assert_eq!(s.counts(), split(&g, DEFAULT_SPLIT, seed + 100).unwrap().counts());
        }
    }

    #[test]
    fn normalized_adjacency_examples() {
        let a = normalized_adjacency(1, 1, &[Edge::new(0, 0)]).unwrap();
        assert_eq!(a.get(0, 1), Some(1.0));
        assert_eq!(a.get(1, 0), Some(1.0));

        let star: Vec<Edge> = (0..4).map(|i| Edge::new(0, i)).collect();
        let a = normalized_adjacency(1, 4, &star).unwrap();
        for i in 1..5 {
            assert_eq!(a.get(0, i), Some(0.5));
            assert_eq!(a.get(i, 0), Some(0.5));
        }
        assert!(normalized_adjacency(1, 1, &[]).is_err());
    }

    fn small_split() -> DatasetSplit {
        let edges: Vec<(usize, usize)> = (0..200).map(|k| (k % 20, k / 20 * 5 + k % 5)).collect();
        let mut uniq: Vec<(usize, usize)> = edges;
        uniq.sort_unstable();
        uniq.dedup();
        let g = graph(20, 50, &uniq);
        let mut s = split(&g, DEFAULT_SPLIT, 1).unwrap();
        s.train.truncate(100);
        s
    }

    #[test]
    fn noise_ratio_zero_and_counts() {
        let s = small_split();
        assert_eq!(s.perturb_noise(0.0, 3).unwrap().train, s.train);
        let noisy = s.perturb_noise(0.5, 3).unwrap();
        assert_eq!(noisy.train.len(), 150);
        assert!(noisy.perturb_noise(1.5, 3).is_err());
    }

    #[test]
    fn noise_saturation() {
        let g = graph(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let s = DatasetSplit {
            num_users: 2,
            num_items: 2,
            train: g.edges().to_vec(),
            valid: vec![],
            test: vec![],
            seed: 0,
            ratios: DEFAULT_SPLIT,
            catalog: Arc::clone(g.catalog()),
        };
        assert!(matches!(s.perturb_noise(0.5, 0), Err(Error::Saturated { .. })));
    }

    #[test]
    fn sparsify_counts_and_subset() {
        let s = small_split();
        assert_eq!(s.perturb_sparsify(0.0, 1).unwrap().train, s.train);
        let thin = s.perturb_sparsify(0.3, 1).unwrap();
        assert_eq!(thin.train.len(), 70);
        assert!(thin.train.iter().all(|e| s.train.contains(e)));
        assert_eq!(thin.train, s.perturb_sparsify(0.3, 1).unwrap().train);
        assert!(s.perturb_sparsify(1.0, 1).is_err());
    }

    #[test]
    fn split_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "in.tsv",
            &(0..60)
                .map(|k| format!("user{}\titem{}\t{}\n", k % 9, k % 13, k % 5))
                .collect::<String>(),
        );
        let g = ingest(&p, InputFormat::Tsv).unwrap().graph;
        let s = split(&g, DEFAULT_SPLIT, 9).unwrap();
        let out = dir.path().join("split");
        s.save(&out).unwrap();
        let back = DatasetSplit::load(&out).unwrap();
        assert_eq!(back.seed, 9);
        assert_eq!(back.counts(), s.counts());
        let ext = |s: &DatasetSplit, es: &[Edge]| -> BTreeSet<(String, String)> {
            es.iter()
                .map(|e| (s.catalog.users[e.user].clone(), s.catalog.items[e.item].clone()))
                .collect()
        };
        assert_eq!(ext(&back, &back.test), ext(&s, &s.test));
        assert_eq!(back.catalog.ratings.len(), g.catalog().ratings.len());
    }
}
