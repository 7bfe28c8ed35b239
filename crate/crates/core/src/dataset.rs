//! Feature and tag data: loading, writing, holdout masking and synthetic
//! planted-model instances.
//!
//! File formats:
//!
//! * features: one CSV row of `d` numbers per image; lines starting with `#`
//!   are skipped.
//! * tags: a header line `m=<int>`, then `image_id,tag_id,value` triplets with
//!   `value` in `{+1, -1}`. Pairs that never appear are missing.
//! * holdout: `image_id,tag_id` pairs of entries removed for evaluation.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreMatrix;

/// RNG sub-stream used for holdout sampling.
pub const HOLDOUT_STREAM: u64 = 1;
/// RNG sub-stream used for synthetic data.
pub const SYNTH_STREAM: u64 = 2;

/// A ChaCha8 generator for one named sub-stream of a run seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-image visual feature vectors, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, d) = values.dim();
        if n == 0 {
            return Err(Error::InvalidInput("feature matrix is empty: n ≥ 1 violated".into()));
        }
        if d == 0 {
            return Err(Error::InvalidInput(
                "feature matrix has no columns: d ≥ 1 violated".into(),
            ));
        }
        if let Some(((i, j), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature value at row {i}, column {j}"
            )));
        }
        Ok(FeatureMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Per-column zero mean and unit (population) variance. Constant columns
    /// are only centered.
    pub fn standardized(&self) -> FeatureMatrix {
        let mean = self.values.mean_axis(Axis(0)).expect("n ≥ 1");
        let std = self.values.std_axis(Axis(0), 0.0);
        let mut values = &self.values - &mean;
        for (mut col, &s) in values.axis_iter_mut(Axis(1)).zip(std.iter()) {
            if s > 0.0 {
                col /= s;
            }
        }
        FeatureMatrix { values }
    }
}

/// Signed tag matrix with its observation mask.
///
/// Unobserved entries carry a placeholder sign of `+1`; every consumer
/// multiplies by (or branches on) the mask, so the placeholder never reaches
/// an objective or gradient value. Equality likewise ignores the signs of
/// unobserved entries.
#[derive(Debug, Clone)]
pub struct TagObservations {
    signs: Array2<i8>,
    mask: Array2<bool>,
}

impl PartialEq for TagObservations {
    fn eq(&self, other: &Self) -> bool {
        self.mask == other.mask
            && Zip::from(&self.signs)
                .and(&other.signs)
                .and(&self.mask)
                .all(|a, b, &observed| !observed || a == b)
    }
}

impl Eq for TagObservations {}

impl TagObservations {
    pub fn new(signs: Array2<i8>, mask: Array2<bool>) -> Result<Self> {
        if signs.dim() != mask.dim() {
            return Err(Error::Shape(format!(
                "signs are {:?} but mask is {:?}",
                signs.dim(),
                mask.dim()
            )));
        }
        if let Some(((i, j), s)) = signs.indexed_iter().find(|(_, &s)| s != 1 && s != -1) {
            return Err(Error::InvalidInput(format!("tag sign {s} at ({i}, {j}) is not ±1")));
        }
        Ok(TagObservations { signs, mask })
    }

    /// Fully observed tags with the given signs.
    pub fn fully_observed(signs: Array2<i8>) -> Result<Self> {
        let mask = Array2::from_elem(signs.dim(), true);
        Self::new(signs, mask)
    }

    /// An `n × m` matrix with nothing observed.
    pub fn empty(n: usize, m: usize) -> Self {
        TagObservations {
            signs: Array2::ones((n, m)),
            mask: Array2::from_elem((n, m), false),
        }
    }

    pub fn n(&self) -> usize {
        self.signs.nrows()
    }

    pub fn m(&self) -> usize {
        self.signs.ncols()
    }

    /// t̂_ij as a float.
    #[inline]
    pub fn sign(&self, i: usize, j: usize) -> f64 {
        f64::from(self.signs[[i, j]])
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[[i, j]]
    }

    pub fn signs(&self) -> ArrayView2<'_, i8> {
        self.signs.view()
    }

    pub fn mask(&self) -> ArrayView2<'_, bool> {
        self.mask.view()
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&v| v).count()
    }

    /// Marks `(i, j)` observed with sign `sign`.
    pub fn observe(&mut self, i: usize, j: usize, sign: i8) -> Result<()> {
        if sign != 1 && sign != -1 {
            return Err(Error::InvalidInput(format!("tag sign {sign} is not ±1")));
        }
        self.signs[[i, j]] = sign;
        self.mask[[i, j]] = true;
        Ok(())
    }

    /// Observed entries in row-major order.
    pub fn observed_entries(&self) -> Vec<(usize, usize)> {
        self.mask.indexed_iter().filter(|(_, &v)| v).map(|(ij, _)| ij).collect()
    }
}

/// How holdout entries are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoldoutScheme {
    /// Uniform without replacement over all observed entries.
    #[default]
    Global,
    /// The same fraction drawn independently within every image's row.
    PerRow,
}

/// Entries removed from the observations for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSplit {
    pub holdout_mask: Array2<bool>,
    pub fraction: f64,
    pub seed: u64,
}

impl HoldoutSplit {
    /// Held-out entries in row-major order.
    pub fn entries(&self) -> Vec<(usize, usize)> {
        self.holdout_mask
            .indexed_iter()
            .filter(|(_, &v)| v)
            .map(|(ij, _)| ij)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.holdout_mask.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Held-out tag indices of image `i`, ascending.
    pub fn row_entries(&self, i: usize) -> Vec<usize> {
        self.holdout_mask
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, j) in self.entries() {
            let _ = writeln!(out, "{i},{j}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Reads a holdout file for an `n × m` tag matrix. The fraction and seed
    /// are not part of the file and must be supplied.
    pub fn read(path: &Path, n: usize, m: usize, fraction: f64, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut holdout_mask = Array2::from_elem((n, m), false);
        for (lineno, line) in content_lines(&text) {
            let fields = split_fields(line);
            if fields.len() != 2 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 2 fields, found {}", fields.len()),
                ));
            }
            let i = parse_index(path, lineno, fields[0], n, "image id")?;
            let j = parse_index(path, lineno, fields[1], m, "tag id")?;
            holdout_mask[[i, j]] = true;
        }
        Ok(HoldoutSplit {
            holdout_mask,
            fraction,
            seed,
        })
    }

    /// Masks the held-out entries out of `obs`.
    pub fn apply_to(&self, obs: &TagObservations) -> Result<TagObservations> {
        if self.holdout_mask.dim() != obs.mask.dim() {
            return Err(Error::Shape(format!(
                "holdout is {:?} but observations are {:?}",
                self.holdout_mask.dim(),
                obs.mask.dim()
            )));
        }
        let mut masked = obs.clone();
        for ((i, j), &held) in self.holdout_mask.indexed_iter() {
            if held {
                if !obs.mask[[i, j]] {
                    return Err(Error::InvalidInput(format!(
                        "held-out entry ({i}, {j}) was never observed"
                    )));
                }
                masked.mask[[i, j]] = false;
            }
        }
        Ok(masked)
    }
}

/// Removes `fraction` of the observed entries, sampled uniformly without
/// replacement over all observed `(image, tag)` pairs.
pub fn apply_holdout(obs: &TagObservations, fraction: f64, seed: u64) -> Result<(TagObservations, HoldoutSplit)> {
    apply_holdout_with(obs, fraction, seed, HoldoutScheme::Global)
}

pub fn apply_holdout_with(
    obs: &TagObservations,
    fraction: f64,
    seed: u64,
    scheme: HoldoutScheme,
) -> Result<(TagObservations, HoldoutSplit)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "holdout fraction {fraction} must lie in (0, 1)"
        )));
    }
    let observed = obs.observed_entries();
    if observed.is_empty() {
        return Err(Error::InvalidInput("no observed tag entries to hold out".into()));
    }

    let mut rng = seeded_rng(seed, HOLDOUT_STREAM);
    let mut holdout_mask = Array2::from_elem(obs.mask.dim(), false);
    let mut draw = |entries: &[(usize, usize)]| {
        let count = (fraction * entries.len() as f64).round() as usize;
        for k in sample(&mut rng, entries.len(), count) {
            let (i, j) = entries[k];
            holdout_mask[[i, j]] = true;
        }
    };
    match scheme {
        HoldoutScheme::Global => draw(&observed),
        HoldoutScheme::PerRow => {
            for row in observed.chunk_by(|a, b| a.0 == b.0) {
                draw(row);
            }
        }
    }

    let split = HoldoutSplit {
        holdout_mask,
        fraction,
        seed,
    };
    let masked = split.apply_to(obs)?;
    Ok((masked, split))
}

/// A planted-model instance with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub features: FeatureMatrix,
    pub tags: TagObservations,
    /// Noisy planted scores t*; `tags` holds their signs.
    pub planted: ScoreMatrix,
    /// Cluster of each image.
    pub clusters: Vec<usize>,
}

/// Parameters of [`synthesize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub kappa: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Spread of cluster centers relative to the unit within-cluster spread.
const CENTER_SCALE: f64 = 3.0;
/// Spread of each cluster's per-tag offset.
const OFFSET_SCALE: f64 = 0.3;
/// Dimension of the plane each cluster's points lie near.
const LATENT_RANK: usize = 2;
/// Isotropic scatter off that plane.
const JITTER: f64 = 0.05;

impl SynthParams {
    /// Number of clusters: roughly four neighborhoods per cluster, between 1 and 8.
    pub fn clusters(&self) -> usize {
        (self.n / (4 * (self.kappa + 1))).clamp(1, 8)
    }
}

/// Draws cluster-structured features and plants scores from cluster-local
/// linear maps:
///
/// `t*_i = A_c (x_i − μ_c) + b_c + noise · ε_i` for image `i` in cluster `c`.
///
/// Each cluster's points lie near a random plane through its center:
/// `x_i = μ_c + B_c z_i / √2 + 0.05 u_i` with `B_c` a `d × 2` standard
/// normal matrix and `z_i, u_i` standard normal (isotropic `N(μ_c, I)` when
/// `d ≤ 2`). Centers are `N(0, 9 I)`, `A_c` entries `N(0, 1/d)`, `b_c`
/// entries `N(0, 0.09)`, `ε_i ~ N(0, I)`. Images are assigned to clusters
/// round-robin. Tags are the signs of t* (zero maps to +1), fully observed.
pub fn synthesize(p: SynthParams) -> Result<SyntheticData> {
    if p.kappa < 1 || p.n <= p.kappa {
        return Err(Error::InvalidInput(format!(
            "synthesize needs n > kappa ≥ 1 (n = {}, kappa = {})",
            p.n, p.kappa
        )));
    }
    if p.d == 0 || p.m == 0 {
        return Err(Error::InvalidInput("synthesize needs d ≥ 1 and m ≥ 1".into()));
    }
    if !(p.noise >= 0.0 && p.noise.is_finite()) {
        return Err(Error::InvalidInput(format!("noise {} must be finite and ≥ 0", p.noise)));
    }

    let mut rng = seeded_rng(p.seed, SYNTH_STREAM);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let c = p.clusters();
    let low_rank = p.d > LATENT_RANK;

    let centers = Array2::from_shape_simple_fn((c, p.d), || CENTER_SCALE * normal());
    let planes: Vec<Array2<f64>> = (0..c)
        .map(|_| Array2::from_shape_simple_fn((p.d, LATENT_RANK), &mut normal) / (LATENT_RANK as f64).sqrt())
        .collect();
    let maps: Vec<Array2<f64>> = (0..c)
        .map(|_| Array2::from_shape_simple_fn((p.m, p.d), || normal() / (p.d as f64).sqrt()))
        .collect();
    let offsets = Array2::from_shape_simple_fn((c, p.m), || OFFSET_SCALE * normal());

    let clusters: Vec<usize> = (0..p.n).map(|i| i % c).collect();
    let mut features = Array2::zeros((p.n, p.d));
    let mut planted = Array2::zeros((p.n, p.m));
    for (i, &ci) in clusters.iter().enumerate() {
        let latent = Array1::from_shape_simple_fn(LATENT_RANK, &mut normal);
        let scatter = Array1::from_shape_simple_fn(p.d, &mut normal);
        let local = if low_rank {
            planes[ci].dot(&latent) + JITTER * scatter
        } else {
            scatter
        };
        features.row_mut(i).assign(&(&centers.row(ci) + &local));
        let mut t = maps[ci].dot(&local) + offsets.row(ci);
        t.mapv_inplace(|v| v + p.noise * normal());
        planted.row_mut(i).assign(&t);
    }

    let signs = planted.mapv(|v| if v < 0.0 { -1i8 } else { 1 });
    Ok(SyntheticData {
        features: FeatureMatrix::new(features)?,
        tags: TagObservations::fully_observed(signs)?,
        planted: ScoreMatrix::new(planted)?,
        clusters,
    })
}

fn content_lines(text: &str) -> impl Iterator<Item = (u64, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k as u64 + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_index(path: &Path, line: u64, field: &str, len: usize, what: &str) -> Result<usize> {
    let idx: usize = field
        .parse()
        .map_err(|_| Error::parse(path, line, format!("{what} {field:?} is not a non-negative integer")))?;
    if idx >= len {
        return Err(Error::parse(path, line, format!("{what} out of range: {idx} ≥ {len}")));
    }
    Ok(idx)
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut d = None;
    let mut n = 0;
    for (lineno, line) in content_lines(&text) {
        let fields = split_fields(line);
        match d {
            None => d = Some(fields.len()),
            Some(d) if d != fields.len() => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("row has {} values, expected {d}", fields.len()),
                ));
            }
            _ => {}
        }
        for field in fields {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("{field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("non-finite feature value {field:?}"),
                ));
            }
            data.push(v);
        }
        n += 1;
    }
    let Some(d) = d else {
        return Err(Error::parse(path, 1, "no feature rows: n ≥ 1 violated"));
    };
    let values = Array2::from_shape_vec((n, d), data).expect("row arity checked");
    FeatureMatrix::new(values)
}

/// Reads a score matrix written by [`matrix_to_csv`].
pub fn read_scores(path: &Path) -> Result<ScoreMatrix> {
    ScoreMatrix::new(read_features(path)?.values().to_owned())
}

/// Reads a tags file for `n` images.
pub fn read_tags(path: &Path, n: usize) -> Result<TagObservations> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = content_lines(&text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing `m=<int>` header"))?;
    let m: usize = header
        .strip_prefix("m=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::parse(path, hline, format!("expected `m=<int>` header, found {header:?}")))?;
    if m == 0 {
        return Err(Error::parse(path, hline, "m ≥ 1 violated"));
    }

    let mut obs = TagObservations::empty(n, m);
    for (lineno, line) in lines {
        let fields = split_fields(line);
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let i = parse_index(path, lineno, fields[0], n, "image id")?;
        let j = parse_index(path, lineno, fields[1], m, "tag id")?;
        let sign = match fields[2] {
            "+1" | "1" => 1,
            "-1" => -1,
            other => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("tag value {other:?} is not +1 or -1"),
                ));
            }
        };
        if obs.is_observed(i, j) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate entry for image {i}, tag {j}"),
            ));
        }
        obs.observe(i, j, sign)?;
    }
    Ok(obs)
}

/// Loads and cross-validates a features file and a tags file.
pub fn load_dataset(features_path: &Path, tags_path: &Path) -> Result<(FeatureMatrix, TagObservations)> {
    let features = read_features(features_path)?;
    let tags = read_tags(tags_path, features.n())?;
    Ok((features, tags))
}

pub fn features_to_csv(features: &FeatureMatrix) -> String {
    matrix_to_csv(features.values())
}

/// Real matrix as CSV with shortest round-trip float formatting.
pub fn matrix_to_csv(values: ArrayView2<'_, f64>) -> String {
    let mut out = String::new();
    for row in values.rows() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn tags_to_csv(tags: &TagObservations) -> String {
    let mut out = format!("m={}\n", tags.m());
    for (i, j) in tags.observed_entries() {
        let s = if tags.signs[[i, j]] > 0 { "+1" } else { "-1" };
        let _ = writeln!(out, "{i},{j},{s}");
    }
    out
}

pub fn write_dataset(
    features_path: &Path,
    tags_path: &Path,
    features: &FeatureMatrix,
    tags: &TagObservations,
) -> Result<()> {
    if features.n() != tags.n() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} tag rows",
            features.n(),
            tags.n()
        )));
    }
    std::fs::write(features_path, features_to_csv(features)).map_err(|e| Error::io(features_path, e))?;
    std::fs::write(tags_path, tags_to_csv(tags)).map_err(|e| Error::io(tags_path, e))
}
