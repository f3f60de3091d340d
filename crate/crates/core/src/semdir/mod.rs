//! Discovery of a pose direction in W: sample and filter a synthetic corpus,
//! annotate it with a pose oracle, fit a linear probe on the latents, and
//! threshold its weights into a traversal direction.

mod oracle;
mod probe;
#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

pub use oracle::{
    check_oracle_grads, init_oracle, oracle_forward, pose_labels, train_pose_oracle, OracleConfig, OracleReport,
    PoseOracle,
};
pub use probe::{default_lambda, extract_direction, fit_probe, DirectionVector, PoseProbe};

use crate::error::{Error, Result};
use crate::image::{grid, Image, SIZE};
use crate::par::Exec;
use crate::scenegen::{background, NUM_BACKGROUNDS};
use crate::seed;
use crate::stylegan::{sample_z, GanBundle, LatentW, W_DIM};

/// Corpus size of the full configuration.
pub const FULL_CORPUS: usize = 25_000;
/// Corpus size of the desk configuration.
pub const DESK_CORPUS: usize = 2_500;
pub const MIN_CORPUS: usize = 100;
/// RGB distance beyond which a pixel counts as foreground.
pub const FG_DISTANCE: f32 = 0.2;
pub const DEFAULT_TAU: f64 = 0.1;
/// Degrees represented by one calibrated traversal unit.
pub const UNIT_DEG: f64 = 10.0;

/// Mapped latents and their synthesised images.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub latents: Vec<LatentW>,
    pub images: Vec<Image>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn w_rows(&self) -> Vec<Vec<f32>> {
        self.latents.iter().map(|w| w.values().to_vec()).collect()
    }
}

/// Samples `n` random latents (item `i` from its own derived seed) and
/// renders them.
pub fn sample_corpus(exec: Exec, bundle: &GanBundle, n: usize, seed_: u64) -> Result<Corpus> {
    if n < MIN_CORPUS {
        return Err(Error::param("n", format!("need at least {MIN_CORPUS} samples, got {n}")));
    }
    let mut z = Vec::with_capacity(n * W_DIM);
    for i in 0..n {
        let mut rng = seed::rng(seed::derive_index(seed_, "corpus", i as u64));
        z.extend(sample_z(1, &mut rng).into_vec());
    }
    let w = bundle.map_z_batch(&crate::numerics::Array::from_vec(&[n, W_DIM], z)?)?;
    let latents = w
        .data()
        .chunks(W_DIM)
        .map(|c| LatentW::w(c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let images = bundle.render_images(exec, &latents)?;
    Ok(Corpus { latents, images })
}

/// Fraction of pixels farther than [`FG_DISTANCE`] from every background
/// colour at that pixel.
pub fn foreground_fraction(img: &Image) -> f64 {
    let mut fg = 0;
    for y in 0..img.height {
        for x in 0..img.width {
            let p = img.pixel(y, x);
            let near = (0..NUM_BACKGROUNDS).any(|id| {
                let b = background(id, y, x);
                let d2: f32 = (0..3).map(|c| (p[c] - b[c]).powi(2)).sum();
                d2 <= FG_DISTANCE * FG_DISTANCE
            });
            if !near {
                fg += 1;
            }
        }
    }
    fg as f64 / (img.height * img.width) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub kept: usize,
    pub retention: f64,
}

/// Keeps items whose foreground fraction lies in `[min_fg, max_fg]`.
pub fn filter_corpus(corpus: &Corpus, min_fg: f64, max_fg: f64) -> Result<(Corpus, FilterReport)> {
    if !(0.0 <= min_fg && min_fg < max_fg && max_fg <= 1.0) {
        return Err(Error::param("min_fg", "need 0 <= min_fg < max_fg <= 1"));
    }
    let mut out = Corpus::default();
    for (w, img) in corpus.latents.iter().zip(&corpus.images) {
        let f = foreground_fraction(img);
        if (min_fg..=max_fg).contains(&f) {
            out.latents.push(w.clone());
            out.images.push(img.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Empty(format!(
            "no image has a foreground fraction in [{min_fg}, {max_fg}]; widen the bounds"
        )));
    }
    let report = FilterReport {
        total: corpus.len(),
        kept: out.len(),
        retention: out.len() as f64 / corpus.len().max(1) as f64,
    };
    Ok((out, report))
}

/// `w + c·d`; for W+ latents `d` is added to every block.
pub fn traverse(w: &LatentW, d: &DirectionVector, c: f64) -> LatentW {
    w.shifted(&d.as_f32(), c as f32)
}

fn oracle_on_latents(exec: Exec, bundle: &GanBundle, oracle: &PoseOracle, ws: &[LatentW]) -> Result<Vec<f64>> {
    let x = bundle.synthesize_batch(exec, ws)?;
    Ok(oracle.predict_model(exec, &x))
}

/// Median over `latents` of the oracle's pose change per unit coefficient,
/// measured at coefficient `c0`.
pub fn calibrate(
    exec: Exec,
    d: &DirectionVector,
    bundle: &GanBundle,
    oracle: &PoseOracle,
    latents: &[LatentW],
    c0: f64,
) -> Result<f64> {
    if latents.is_empty() {
        return Err(Error::Empty("no latents to calibrate on".into()));
    }
    if !(c0.is_finite() && c0 != 0.0) {
        return Err(Error::param("c0", "must be finite and non-zero"));
    }
    let shifted: Vec<LatentW> = latents.iter().map(|w| traverse(w, d, c0)).collect();
    let base = oracle_on_latents(exec, bundle, oracle, latents)?;
    let moved = oracle_on_latents(exec, bundle, oracle, &shifted)?;
    let mut rates: Vec<f64> = base.iter().zip(&moved).map(|(a, b)| (b - a) / c0).collect();
    let m = median(&mut rates);
    if !m.is_finite() {
        return Err(Error::non_finite("calibrated degrees per unit"));
    }
    Ok(m)
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Traversal coefficients (W units) for multiples of [`UNIT_DEG`] degrees.
pub fn calibrated_coefficients(d: &DirectionVector, units: &[f64]) -> Result<Vec<f64>> {
    let dpu = d
        .degrees_per_unit
        .ok_or_else(|| Error::param("direction", "direction has not been calibrated"))?;
    if dpu == 0.0 || !dpu.is_finite() {
        return Err(Error::param("degrees_per_unit", "calibration produced no pose change"));
    }
    Ok(units.iter().map(|k| k * UNIT_DEG / dpu).collect())
}

/// Oracle pose of every latent at every coefficient, one row per latent.
pub fn pose_sweep(
    exec: Exec,
    bundle: &GanBundle,
    oracle: &PoseOracle,
    d: &DirectionVector,
    latents: &[LatentW],
    coefficients: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let all: Vec<LatentW> = latents
        .iter()
        .flat_map(|w| coefficients.iter().map(move |&c| traverse(w, d, c)))
        .collect();
    let poses = oracle_on_latents(exec, bundle, oracle, &all)?;
    Ok(poses.chunks(coefficients.len()).map(<[f64]>::to_vec).collect())
}

/// Whether `row` is non-decreasing (or non-increasing when `increasing` is
/// false).
pub fn is_monotone(row: &[f64], increasing: bool) -> bool {
    row.windows(2).all(|p| if increasing { p[1] >= p[0] } else { p[1] <= p[0] })
}

pub fn monotone_fraction(rows: &[Vec<f64>], increasing: bool) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|r| is_monotone(r, increasing)).count() as f64 / rows.len() as f64
}

/// Fraction of latents whose `classify` label is the same for `G(w)` and
/// both `G(w ± units·UNIT_DEG)` traversals.
pub fn identity_preservation<F>(
    exec: Exec,
    bundle: &GanBundle,
    d: &DirectionVector,
    latents: &[LatentW],
    units: f64,
    classify: F,
) -> Result<f64>
where
    F: Fn(&[Image]) -> Vec<usize>,
{
    if latents.is_empty() {
        return Err(Error::Empty("no latents to check".into()));
    }
    let c = calibrated_coefficients(d, &[-units, 0.0, units])?;
    let all: Vec<LatentW> = latents
        .iter()
        .flat_map(|w| c.iter().map(move |&ci| traverse(w, d, ci)))
        .collect();
    let labels = classify(&bundle.render_images(exec, &all)?);
    let kept = labels.chunks(3).filter(|l| l[0] == l[1] && l[1] == l[2]).count();
    Ok(kept as f64 / latents.len() as f64)
}

/// Image grid: one row per latent, one column per coefficient.
pub fn sweep_strip(
    exec: Exec,
    bundle: &GanBundle,
    d: &DirectionVector,
    latents: &[LatentW],
    coefficients: &[f64],
) -> Result<Image> {
    let all: Vec<LatentW> = latents
        .iter()
        .flat_map(|w| coefficients.iter().map(move |&c| traverse(w, d, c)))
        .collect();
    let images = bundle.render_images(exec, &all)?;
    let rows: Vec<Vec<Image>> = images.chunks(coefficients.len()).map(<[Image]>::to_vec).collect();
    let strip = grid(&rows);
    debug_assert!(strip.width >= SIZE);
    Ok(strip)
}

/// Output of the direction-discovery pipeline.
#[derive(Clone, Debug)]
pub struct Discovery {
    pub direction: DirectionVector,
    pub probe: PoseProbe,
    pub filter: FilterReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryConfig {
    pub corpus_size: usize,
    pub min_fg: f64,
    pub max_fg: f64,
    pub tau: f64,
    /// `None` uses the trace-scaled default.
    pub lambda: Option<f64>,
    pub calibration_samples: usize,
    pub calibration_step: f64,
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            corpus_size: DESK_CORPUS,
            min_fg: 0.05,
            max_fg: 0.60,
            tau: DEFAULT_TAU,
            lambda: None,
            calibration_samples: 200,
            calibration_step: 0.5,
            seed: 0,
        }
    }
}

/// Samples, filters and annotates a corpus, fits the probe, extracts and
/// calibrates the direction.
pub fn discover_direction(
    exec: Exec,
    bundle: &GanBundle,
    oracle: &PoseOracle,
    cfg: &DiscoveryConfig,
) -> Result<Discovery> {
    let corpus = sample_corpus(exec, bundle, cfg.corpus_size, seed::derive(cfg.seed, "corpus"))?;
    let (kept, filter) = filter_corpus(&corpus, cfg.min_fg, cfg.max_fg)?;
    log::info!("corpus filter kept {}/{}", filter.kept, filter.total);
    let poses = oracle.predict(exec, &kept.images);
    let probe = fit_probe(&kept.w_rows(), &poses, cfg.lambda)?;
    log::info!("pose probe R² {:.3}", probe.r2);
    let mut direction = extract_direction(&probe, cfg.tau)?;
    let calib = sample_corpus(
        exec,
        bundle,
        cfg.calibration_samples.max(MIN_CORPUS),
        seed::derive(cfg.seed, "calibration"),
    )?;
    let dpu = calibrate(exec, &direction, bundle, oracle, &calib.latents, cfg.calibration_step)?;
    direction.degrees_per_unit = Some(dpu);
    log::info!("direction keeps {} dims, {dpu:.2}°/unit", direction.kept());
    Ok(Discovery { direction, probe, filter })
}
