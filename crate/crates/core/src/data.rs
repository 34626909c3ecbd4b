//! Datasets and the public/private transfer split.
//!
//! The default task is a Gaussian mixture: every class owns one or more
//! spherical clusters. The upstream (public) and downstream (private) sets are
//! either disjoint parts of one pool, or the downstream part is drawn from a
//! shifted copy of the mixture.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-feature standardisation fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(features: &Tensor) -> Self {
        let (n, d) = (features.rows(), features.cols());
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(features.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n.max(1) as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, features: &Tensor) -> Tensor {
        let d = features.cols();
        let mut out = features.clone();
        for row in out.data_mut().chunks_mut(d.max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub normalization: Normalization,
}

impl Dataset {
    /// Fits the normalisation on `raw` and stores the standardised features.
    pub fn fit(name: &str, raw: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let normalization = Normalization::fit(&raw);
        Self::with_normalization(name, &raw, labels, num_classes, normalization)
    }

    /// Standardises `raw` with statistics fitted elsewhere (a test split).
    pub fn with_normalization(
        name: &str,
        raw: &Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        normalization: Normalization,
    ) -> Result<Self> {
        if raw.rows() != labels.len() {
            return Err(Error::Input(format!("{} feature rows for {} labels", raw.rows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!("label {bad} not in [0, {num_classes})")));
        }
        Ok(Self { name: name.to_string(), features: normalization.apply(raw), labels, num_classes, normalization })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    /// Features and labels of the given rows.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let x = self.features.select_rows(indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Upstream and downstream are disjoint parts of one pool.
    IidSplit,
    /// Downstream comes from a related mixture with moved class centres.
    Shifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub relation: Relation,
    pub n_up: usize,
    pub n_down: usize,
    pub n_up_test: usize,
    pub n_down_test: usize,
    pub d_in: usize,
    pub k: usize,
    /// Typical distance between cluster centres, in units of `noise_std`.
    pub separation: f64,
    pub noise_std: f64,
    pub clusters_per_class: usize,
    /// Length of the per-cluster centre offset in shifted mode, in units of `noise_std`.
    pub shift: f64,
    /// Relative growth of the downstream noise per unit of shift.
    pub shift_cov_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            relation: Relation::IidSplit,
            n_up: 1800,
            n_down: 200,
            n_up_test: 600,
            n_down_test: 600,
            d_in: 16,
            k: 4,
            separation: 3.0,
            noise_std: 1.0,
            clusters_per_class: 1,
            shift: 0.0,
            shift_cov_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferTask {
    pub upstream: Dataset,
    pub upstream_test: Dataset,
    pub downstream_train: Dataset,
    pub downstream_test: Dataset,
    pub relation: Relation,
}

struct Mixture {
    centres: Vec<Vec<f64>>, // [k * clusters][d]
    noise_std: f64,
    clusters: usize,
}

impl Mixture {
    fn sample(&self, label: usize, cluster: usize, z: &[f64]) -> Vec<f64> {
        let c = &self.centres[label * self.clusters + cluster];
        c.iter().zip(z).map(|(m, e)| m + self.noise_std * e).collect()
    }
}

fn unit_vector<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::tensor::l2_norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

struct Draw {
    label: usize,
    cluster: usize,
    z: Vec<f64>,
}

fn draw_balanced<R: Rng>(rng: &mut R, n: usize, cfg: &SyntheticConfig) -> Vec<Draw> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.k).collect();
    labels.shuffle(rng);
    labels
        .into_iter()
        .map(|label| Draw {
            label,
            cluster: rng.random_range(0..cfg.clusters_per_class),
            z: (0..cfg.d_in).map(|_| rng.sample(StandardNormal)).collect(),
        })
        .collect()
}

fn materialise(draws: &[Draw], mixture: &Mixture) -> Result<(Tensor, Vec<usize>)> {
    let rows: Vec<Vec<f64>> = draws.iter().map(|d| mixture.sample(d.label, d.cluster, &d.z)).collect();
    let labels = draws.iter().map(|d| d.label).collect();
    Ok((Tensor::from_rows(&rows)?, labels))
}

/// Deterministic synthetic transfer task for `seed`.
pub fn make_synthetic_transfer(seed: u64, cfg: &SyntheticConfig) -> Result<TransferTask> {
    if cfg.k < 2 {
        return Err(Error::Input(format!("need at least 2 classes, got {}", cfg.k)));
    }
    if cfg.n_up < 10 * cfg.k || cfg.n_down < 10 * cfg.k {
        return Err(Error::Input(format!(
            "n_up ({}) and n_down ({}) must be at least 10 * k = {}",
            cfg.n_up,
            cfg.n_down,
            10 * cfg.k
        )));
    }
    if cfg.d_in == 0 || cfg.clusters_per_class == 0 || cfg.n_up_test == 0 || cfg.n_down_test == 0 {
        return Err(Error::Input("d_in, clusters_per_class and test sizes must be positive".into()));
    }
    if !(cfg.noise_std > 0.0) || cfg.separation < 0.0 || cfg.shift < 0.0 {
        return Err(Error::Input("noise_std must be positive, separation and shift nonnegative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = cfg.separation * cfg.noise_std / std::f64::consts::SQRT_2;
    let n_centres = cfg.k * cfg.clusters_per_class;
    let centres: Vec<Vec<f64>> =
        (0..n_centres).map(|_| unit_vector(&mut rng, cfg.d_in).into_iter().map(|v| v * radius).collect()).collect();
    // Shift directions are drawn in both modes so a zero shift reproduces the iid task.
    let shift_dirs: Vec<Vec<f64>> = (0..n_centres).map(|_| unit_vector(&mut rng, cfg.d_in)).collect();

    let upstream_mix = Mixture { centres: centres.clone(), noise_std: cfg.noise_std, clusters: cfg.clusters_per_class };
    let downstream_mix = match cfg.relation {
        Relation::IidSplit => Mixture { centres, noise_std: cfg.noise_std, clusters: cfg.clusters_per_class },
        Relation::Shifted => Mixture {
            centres: centres
                .iter()
                .zip(&shift_dirs)
                .map(|(c, u)| c.iter().zip(u).map(|(m, d)| m + cfg.shift * cfg.noise_std * d).collect())
                .collect(),
            noise_std: cfg.noise_std * (1.0 + cfg.shift_cov_scale * cfg.shift),
            clusters: cfg.clusters_per_class,
        },
    };

    let mut pool = draw_balanced(&mut rng, cfg.n_up + cfg.n_down, cfg);
    pool.shuffle(&mut rng);
    let down_draws = pool.split_off(cfg.n_up);
    let up_test = draw_balanced(&mut rng, cfg.n_up_test, cfg);
    let down_test = draw_balanced(&mut rng, cfg.n_down_test, cfg);

    let (xu, yu) = materialise(&pool, &upstream_mix)?;
    let (xut, yut) = materialise(&up_test, &upstream_mix)?;
    let (xd, yd) = materialise(&down_draws, &downstream_mix)?;
    let (xdt, ydt) = materialise(&down_test, &downstream_mix)?;

    let upstream = Dataset::fit("upstream", xu, yu, cfg.k)?;
    let upstream_test = Dataset::with_normalization("upstream_test", &xut, yut, cfg.k, upstream.normalization.clone())?;
    let downstream_train = Dataset::fit("downstream_train", xd, yd, cfg.k)?;
    let downstream_test =
        Dataset::with_normalization("downstream_test", &xdt, ydt, cfg.k, downstream_train.normalization.clone())?;
    Ok(TransferTask { upstream, upstream_test, downstream_train, downstream_test, relation: cfg.relation })
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes.get(offset..offset + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]])).ok_or_else(|| Error::Format {
        offset,
        detail: format!("file truncated: need 4 header bytes, have {}", bytes.len().saturating_sub(offset)),
    })
}

/// Parses an IDX3 unsigned-byte image file into an `[n, rows*cols]` tensor scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let width = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * width {
        return Err(Error::Format {
            offset: 16 + body.len(),
            detail: format!("pixel data truncated: need {} bytes, have {}", n * width, body.len()),
        });
    }
    let data = body[..n * width].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, width], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format {
            offset: 8 + body.len(),
            detail: format!("label data truncated: need {n} bytes, have {}", body.len()),
        });
    }
    Ok(body[..n].iter().map(|&b| b as usize).collect())
}

/// Loads an MNIST-style image/label IDX pair; features are scaled to `[0,1]`
/// and then standardised with statistics of this file.
pub fn load_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let x = parse_idx_images(&std::fs::read(images)?)?;
    let y = parse_idx_labels(&std::fs::read(labels)?)?;
    if x.rows() != y.len() {
        return Err(Error::Input(format!("{} images but {} labels", x.rows(), y.len())));
    }
    let k = y.iter().copied().max().map_or(0, |m| m + 1);
    let name = images.file_name().and_then(|s| s.to_str()).unwrap_or("idx").to_string();
    Dataset::fit(&name, x, y, k)
}
