//! Average-linkage agglomerative clustering, dendrogram cuts and the
//! contingency/summary reports built on top of a flat partition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::panel::{TemperaturePanel, Zone};

/// One agglomeration step. Leaves are nodes `0..K`; merge `m` creates node
/// `K + m`. `left` is the side holding the smaller leaf index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    labels: Vec<String>,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn n_leaves(&self) -> usize {
        self.labels.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat partition after applying the first `n_merges` merges, as leaf
    /// index groups ordered by their smallest leaf.
    pub fn partition_after(&self, n_merges: usize) -> Vec<Vec<usize>> {
        let k = self.n_leaves();
        let mut members: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
        members.reserve(n_merges);
        for m in &self.merges[..n_merges] {
            let mut joined = std::mem::take(&mut members[m.left]);
            joined.append(&mut std::mem::take(&mut members[m.right]));
            members.push(joined);
        }
        let mut groups: Vec<Vec<usize>> = members.into_iter().filter(|g| !g.is_empty()).collect();
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort_unstable_by_key(|g| g[0]);
        groups
    }
}

struct Active {
    node: usize,
    rep: usize,
    size: usize,
}

/// Average-linkage (UPGMA) agglomeration.
///
/// The Lance-Williams average update is carried in sum form: the working
/// matrix holds the total raw distance between two clusters, so merging is
/// an addition and integer distances stay exact. Among pairs at the minimal
/// average the one with the lexicographically smallest
/// `(min rep, max rep)` leaf representatives is merged first.
pub fn agglomerate(dist: &DistanceMatrix) -> Result<Dendrogram> {
    let k = dist.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("clustering needs at least 2 leaves, got {k}")));
    }
    if dist.values().iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("distance matrix".into()));
    }
    let mut sums: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| dist.get(i, j)).collect()).collect();
    let mut slots: Vec<Option<Active>> = (0..k)
        .map(|i| Some(Active { node: i, rep: i, size: 1 }))
        .collect();
    let mut merges = Vec::with_capacity(k - 1);

    for step in 0..k - 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for a in 0..k {
            let Some(ca) = &slots[a] else { continue };
            for b in a + 1..k {
                let Some(cb) = &slots[b] else { continue };
                let avg = sums[a][b] / (ca.size * cb.size) as f64;
                let key = (ca.rep.min(cb.rep), ca.rep.max(cb.rep));
                let better = match best {
                    None => true,
                    Some((h, bk, _, _)) => avg < h || (avg == h && key < bk),
                };
                if better {
                    best = Some((avg, key, a, b));
                }
            }
        }
        let (height, _, a, b) = best.expect("at least two active clusters");
        let ca = slots[a].take().unwrap();
        let cb = slots[b].take().unwrap();
        let (lo, hi) = if ca.rep < cb.rep { (ca, cb) } else { (cb, ca) };
        // new cluster lives in slot `a`
        for c in 0..k {
            if c != a && c != b && slots[c].is_some() {
                let s = sums[a][c] + sums[b][c];
                sums[a][c] = s;
                sums[c][a] = s;
            }
        }
        merges.push(Merge {
            left: lo.node,
            right: hi.node,
            height,
            size: lo.size + hi.size,
        });
        slots[a] = Some(Active {
            node: k + step,
            rep: lo.rep,
            size: lo.size + hi.size,
        });
    }
    Ok(Dendrogram {
        labels: dist.labels().to_vec(),
        merges,
    })
}

/// How to turn a dendrogram into a flat partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum CutRule {
    /// Exactly `k` groups, singletons included.
    Groups(usize),
    /// The coarsest cut with exactly `k` groups of at least `min_size`
    /// members; smaller groups become idiosyncratic.
    Clusters(usize),
    /// Apply every merge at or below this height.
    Height(f64),
    /// Largest ratio of consecutive merge heights among the last ⌈K/3⌉
    /// merges.
    Auto,
}

/// Which rule produced an assignment and where it landed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutRecord {
    pub rule: CutRule,
    pub min_size: usize,
    /// Number of groups (singletons included) at the cut.
    pub groups: usize,
    /// Height of the last merge applied, if any.
    pub below: Option<f64>,
    /// Height of the first merge not applied, if any.
    pub above: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    A,
    B,
    C,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Scheme::A),
            "B" => Ok(Scheme::B),
            "C" => Ok(Scheme::C),
            _ => Err(Error::InvalidArgument(format!("unknown scheme {s:?}"))),
        }
    }
}

/// Where a country ended up in an assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Membership {
    Cluster(usize),
    Idiosyncratic,
    Null,
}

/// Flat clustering of a set of countries.
///
/// Every covered id is in exactly one of: a numbered cluster (`1..=k`), the
/// idiosyncratic set, or the null-excluded set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub scheme: Option<Scheme>,
    labels: BTreeMap<String, usize>,
    idiosyncratic: BTreeSet<String>,
    null_excluded: BTreeSet<String>,
    names: BTreeMap<usize, String>,
    pub cut: Option<CutRecord>,
}

impl ClusterAssignment {
    /// Builds an assignment from explicit groups; groups smaller than
    /// `min_size` become idiosyncratic, the rest are numbered in order.
    pub fn from_groups(groups: &[Vec<String>], min_size: usize) -> Result<Self> {
        let mut labels = BTreeMap::new();
        let mut idiosyncratic = BTreeSet::new();
        let mut next = 1;
        for g in groups {
            if g.len() < min_size.max(1) {
                idiosyncratic.extend(g.iter().cloned());
                continue;
            }
            for id in g {
                if labels.insert(id.clone(), next).is_some() {
                    return Err(Error::InvalidArgument(format!("{id:?} appears in two groups")));
                }
            }
            next += 1;
        }
        if let Some(id) = idiosyncratic.iter().find(|id| labels.contains_key(*id)) {
            return Err(Error::InvalidArgument(format!("{id:?} appears in two groups")));
        }
        Ok(ClusterAssignment {
            scheme: None,
            labels,
            idiosyncratic,
            null_excluded: BTreeSet::new(),
            names: BTreeMap::new(),
            cut: None,
        })
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = Some(scheme);
        self
    }

    /// Records ids left out of clustering altogether.
    pub fn with_null_excluded<I: IntoIterator<Item = String>>(mut self, ids: I) -> Result<Self> {
        for id in ids {
            if self.labels.contains_key(&id) || self.idiosyncratic.contains(&id) {
                return Err(Error::InvalidArgument(format!("{id:?} is both clustered and excluded")));
            }
            self.null_excluded.insert(id);
        }
        Ok(self)
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.values().max().copied().unwrap_or(0)
    }

    pub fn membership(&self, id: &str) -> Option<Membership> {
        if let Some(&k) = self.labels.get(id) {
            Some(Membership::Cluster(k))
        } else if self.idiosyncratic.contains(id) {
            Some(Membership::Idiosyncratic)
        } else if self.null_excluded.contains(id) {
            Some(Membership::Null)
        } else {
            None
        }
    }

    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.labels.get(id).copied()
    }

    pub fn labels(&self) -> &BTreeMap<String, usize> {
        &self.labels
    }

    pub fn idiosyncratic(&self) -> &BTreeSet<String> {
        &self.idiosyncratic
    }

    pub fn null_excluded(&self) -> &BTreeSet<String> {
        &self.null_excluded
    }

    pub fn members(&self, cluster: usize) -> Vec<String> {
        self.labels
            .iter()
            .filter(|(_, &k)| k == cluster)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// All ids the assignment covers, in any of the three roles.
    pub fn covered(&self) -> BTreeSet<String> {
        self.labels
            .keys()
            .chain(&self.idiosyncratic)
            .chain(&self.null_excluded)
            .cloned()
            .collect()
    }

    /// Clusters as sets of ids, for order-free comparisons.
    pub fn clusters(&self) -> BTreeSet<BTreeSet<String>> {
        (1..=self.n_clusters())
            .map(|k| self.members(k).into_iter().collect())
            .collect()
    }

    pub fn set_name(&mut self, cluster: usize, name: impl Into<String>) {
        self.names.insert(cluster, name.into());
    }

    pub fn name(&self, cluster: usize) -> String {
        self.names
            .get(&cluster)
            .cloned()
            .unwrap_or_else(|| cluster.to_string())
    }

    /// Renumbers clusters by decreasing mean score of their members.
    /// Names attached to clusters follow them.
    pub fn relabel_by_mean_desc(&mut self, score: impl Fn(&str) -> f64) {
        let k = self.n_clusters();
        let mut means: Vec<(usize, f64)> = (1..=k)
            .map(|c| {
                let m = self.members(c);
                (c, m.iter().map(|id| score(id)).sum::<f64>() / m.len() as f64)
            })
            .collect();
        means.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let remap: BTreeMap<usize, usize> =
            means.iter().enumerate().map(|(new, (old, _))| (*old, new + 1)).collect();
        for v in self.labels.values_mut() {
            *v = remap[v];
        }
        self.names = std::mem::take(&mut self.names)
            .into_iter()
            .map(|(c, n)| (remap.get(&c).copied().unwrap_or(c), n))
            .collect();
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Cuts a dendrogram. Groups smaller than `min_size` become idiosyncratic.
pub fn cut(dendro: &Dendrogram, rule: CutRule, min_size: usize) -> Result<ClusterAssignment> {
    let k = dendro.n_leaves();
    let heights: Vec<f64> = dendro.merges.iter().map(|m| m.height).collect();
    let check_k = |n: usize| {
        if n == 0 || n > k {
            Err(Error::InvalidArgument(format!("cluster count {n} outside [1, {k}]")))
        } else {
            Ok(())
        }
    };
    let n_merges = match rule {
        CutRule::Groups(n) => {
            check_k(n)?;
            k - n
        }
        CutRule::Clusters(n) => {
            check_k(n)?;
            (1..=k)
                .find(|&g| {
                    dendro
                        .partition_after(k - g)
                        .iter()
                        .filter(|grp| grp.len() >= min_size)
                        .count()
                        == n
                })
                .map(|g| k - g)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "no cut yields exactly {n} clusters of size >= {min_size}"
                    ))
                })?
        }
        CutRule::Height(h) => {
            if h.is_nan() {
                return Err(Error::InvalidArgument("cut height is NaN".into()));
            }
            heights.iter().take_while(|&&x| x <= h).count()
        }
        CutRule::Auto => auto_cut(&heights),
    };
    let groups: Vec<Vec<String>> = dendro
        .partition_after(n_merges)
        .into_iter()
        .map(|g| g.into_iter().map(|i| dendro.labels[i].clone()).collect())
        .collect();
    let mut assign = ClusterAssignment::from_groups(&groups, min_size)?;
    assign.cut = Some(CutRecord {
        rule,
        min_size,
        groups: groups.len(),
        below: n_merges.checked_sub(1).map(|i| heights[i]),
        above: heights.get(n_merges).copied(),
    });
    Ok(assign)
}

/// Number of merges to apply under the largest-relative-gap rule.
fn auto_cut(heights: &[f64]) -> usize {
    let n = heights.len();
    let window = (n + 1).div_ceil(3);
    let start = n.saturating_sub(window).max(1);
    let mut best: Option<(f64, usize)> = None;
    for j in start..n {
        let (lo, hi) = (heights[j - 1], heights[j]);
        let ratio = if lo > 0.0 {
            hi / lo
        } else if hi > 0.0 {
            f64::INFINITY
        } else {
            continue;
        };
        // ties resolve to the coarser cut
        if best.is_none_or(|(r, _)| ratio >= r) {
            best = Some((ratio, j));
        }
    }
    best.map_or(n, |(_, j)| j)
}

/// Counts of countries by (row category, column category) with margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ContingencyTable {
    pub fn row_totals(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<usize> {
        (0..self.col_labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn total(&self) -> usize {
        self.row_totals().iter().sum()
    }

    pub fn get(&self, row: &str, col: &str) -> Option<usize> {
        let i = self.row_labels.iter().position(|r| r == row)?;
        let j = self.col_labels.iter().position(|c| c == col)?;
        Some(self.counts[i][j])
    }

    /// CSV with a total column and a bottom total row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header = vec![String::new()];
        header.extend(self.col_labels.iter().cloned());
        header.push("total".into());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for ((label, row), tot) in self.row_labels.iter().zip(&self.counts).zip(self.row_totals()) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(usize::to_string));
            rec.push(tot.to_string());
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        let mut rec = vec!["total".to_string()];
        rec.extend(self.col_totals().iter().map(usize::to_string));
        rec.push(self.total().to_string());
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

const IDIOSYNCRATIC: &str = "idiosyncratic";
const NULL: &str = "null";

/// Category labels of an assignment in table order: clusters, then
/// idiosyncratic and null when present.
fn categories(a: &ClusterAssignment) -> Vec<(Membership, String)> {
    let mut cats: Vec<(Membership, String)> = (1..=a.n_clusters())
        .map(|c| (Membership::Cluster(c), a.name(c)))
        .collect();
    if !a.idiosyncratic.is_empty() {
        cats.push((Membership::Idiosyncratic, IDIOSYNCRATIC.into()));
    }
    if !a.null_excluded.is_empty() {
        cats.push((Membership::Null, NULL.into()));
    }
    cats
}

/// Cross-tabulates two assignments of the same countries (rows from `a`).
pub fn cross_tab(a: &ClusterAssignment, b: &ClusterAssignment, ids: &[String]) -> Result<ContingencyTable> {
    let want: BTreeSet<String> = ids.iter().cloned().collect();
    for x in [a, b] {
        let got = x.covered();
        if got != want {
            let missing = want.symmetric_difference(&got).next().unwrap();
            return Err(Error::InvalidArgument(format!(
                "assignment coverage differs from the panel at {missing:?}"
            )));
        }
    }
    let (rows, cols) = (categories(a), categories(b));
    let mut counts = vec![vec![0; cols.len()]; rows.len()];
    for id in ids {
        let (ma, mb) = (a.membership(id).unwrap(), b.membership(id).unwrap());
        let i = rows.iter().position(|(m, _)| *m == ma).unwrap();
        let j = cols.iter().position(|(m, _)| *m == mb).unwrap();
        counts[i][j] += 1;
    }
    Ok(ContingencyTable {
        row_labels: rows.into_iter().map(|(_, l)| l).collect(),
        col_labels: cols.into_iter().map(|(_, l)| l).collect(),
        counts,
    })
}

/// Zone × cluster table. Countries without a zone go in an `unknown` row.
pub fn zone_cross_tab(assign: &ClusterAssignment, panel: &TemperaturePanel) -> Result<ContingencyTable> {
    let ids = panel.ids();
    let want: BTreeSet<String> = ids.iter().cloned().collect();
    if assign.covered() != want {
        return Err(Error::InvalidArgument("assignment does not cover the panel".into()));
    }
    let cols = categories(assign);
    let mut rows: Vec<Option<Zone>> = Zone::ALL.iter().copied().map(Some).collect();
    if panel.countries().iter().any(|c| c.zone.is_none()) {
        rows.push(None);
    }
    let mut counts = vec![vec![0; cols.len()]; rows.len()];
    for c in panel.countries() {
        let m = assign.membership(&c.id).unwrap();
        let i = rows.iter().position(|z| *z == c.zone).unwrap();
        let j = cols.iter().position(|(x, _)| *x == m).unwrap();
        counts[i][j] += 1;
    }
    Ok(ContingencyTable {
        row_labels: rows
            .iter()
            .map(|z| z.map_or_else(|| "unknown".to_string(), |z| z.name().to_string()))
            .collect(),
        col_labels: cols.into_iter().map(|(_, l)| l).collect(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub cluster: usize,
    pub name: String,
    pub members: usize,
    /// Number of pooled feature values.
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// Set when fewer than two values were pooled; `sd` is then 0.
    pub sd_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub sd_convention: String,
    pub clusters: Vec<ClusterStats>,
}

/// Mean and sample SD (divisor n − 1) of the feature values pooled over
/// each cluster's members. A scalar feature is a length-1 vector.
pub fn cluster_summary(
    assign: &ClusterAssignment,
    features: &BTreeMap<String, Vec<f64>>,
) -> Result<ClusterSummary> {
    let clusters = (1..=assign.n_clusters())
        .map(|c| {
            let members = assign.members(c);
            let mut values = Vec::new();
            for id in &members {
                let f = features.get(id).ok_or_else(|| Error::UnknownCountry(id.clone()))?;
                values.extend_from_slice(f);
            }
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let (sd, sd_degenerate) = if n < 2 {
                (0.0, true)
            } else {
                let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
                ((ss / (n - 1) as f64).sqrt(), false)
            };
            Ok(ClusterStats {
                cluster: c,
                name: assign.name(c),
                members: members.len(),
                n,
                mean,
                sd,
                sd_degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterSummary {
        sd_convention: "sample (n-1)".into(),
        clusters,
    })
}
