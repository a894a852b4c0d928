//! Group-aware symmetric contrastive objective and the alternate
//! training-signal variants (threshold masking, instance max-pooling,
//! pseudo-label and distillation terms).
//!
//! Every loss here returns its value together with the gradient with
//! respect to the similarity matrix and the temperature, so callers can
//! backpropagate into the encoders.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

pub const FIXMATCH_WEIGHT: f64 = 0.33;
pub const FIXMATCH_THRESHOLD: f64 = 0.5;
pub const KD_WEIGHT: f64 = 4.0;
pub const KD_TEMPERATURE: f64 = 3.0;
pub const THRESHOLD_MASK_PROB: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("similarity matrix contains a non-finite value")]
    NonFiniteSimilarity,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("similarity matrix is {rows}x{cols}, expected {n}x{n}")]
    Shape { rows: usize, cols: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, LossError>;

/// A batch of N image/text pairs: class labels, the N×N image-text
/// similarity matrix, and for each image the set of positive text columns.
/// By default the positives of image i are its class group
/// `G_i = { j : c(j) = c(i) }`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    labels: Vec<usize>,
    sim: Array2<f64>,
    positives: Vec<Vec<usize>>,
}

impl TrainBatch {
    pub fn new(labels: Vec<usize>, sim: Array2<f64>) -> Result<Self> {
        let n = labels.len();
        if sim.nrows() != n || sim.ncols() != n {
            return Err(LossError::Shape { rows: sim.nrows(), cols: sim.ncols(), n });
        }
        let positives = (0..n)
            .map(|i| (0..n).filter(|&j| labels[j] == labels[i]).collect())
            .collect();
        Ok(TrainBatch { labels, sim, positives })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sim(&self) -> &Array2<f64> {
        &self.sim
    }

    /// Class group of pair `i` (always contains `i`).
    pub fn group(&self, i: usize) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.labels[j] == self.labels[i]).collect()
    }

    /// Positive text columns for image `i`.
    pub fn positives(&self, i: usize) -> &[usize] {
        &self.positives[i]
    }

    /// Positive image rows for text `j`.
    pub fn column_positives(&self, j: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.positives[i].contains(&j)).collect()
    }

    /// Same labels and positive sets with a different similarity matrix
    /// (e.g. masks computed on frozen-model scores applied to live scores).
    pub fn with_similarity(&self, sim: Array2<f64>) -> Result<Self> {
        let n = self.len();
        if sim.nrows() != n || sim.ncols() != n {
            return Err(LossError::Shape { rows: sim.nrows(), cols: sim.ncols(), n });
        }
        Ok(TrainBatch { labels: self.labels.clone(), sim, positives: self.positives.clone() })
    }

    fn check(&self, tau: f64) -> Result<()> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(LossError::InvalidTemperature(tau));
        }
        if self.sim.iter().any(|v| !v.is_finite()) {
            return Err(LossError::NonFiniteSimilarity);
        }
        Ok(())
    }
}

/// A loss value with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub value: f64,
    pub grad_sim: Array2<f64>,
    pub grad_tau: f64,
}

impl LossTerms {
    pub fn zeros(n: usize, m: usize) -> Self {
        LossTerms { value: 0.0, grad_sim: Array2::zeros((n, m)), grad_tau: 0.0 }
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, other: &LossTerms, weight: f64) {
        self.value += weight * other.value;
        self.grad_sim.scaled_add(weight, &other.grad_sim);
        self.grad_tau += weight * other.grad_tau;
    }
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(row: ArrayView1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(row);
    row.mapv(|v| (v - lse).exp())
}

/// Row-direction term: `-(1/N) Σ_i (1/|P_i|) Σ_{j∈P_i} log softmax_j(S_i·/τ)`.
/// Rows without positives contribute nothing. The gradient is returned in
/// the orientation of `sim`.
fn row_term(sim: ArrayView2<f64>, positives: &[Vec<usize>], tau: f64) -> LossTerms {
    let (n, m) = sim.dim();
    let mut out = LossTerms::zeros(n, m);
    if n == 0 {
        return out;
    }
    let inv_n = 1.0 / n as f64;
    let mut grad_z = Array2::<f64>::zeros((n, m));
    for (i, pos) in positives.iter().enumerate() {
        if pos.is_empty() {
            continue;
        }
        let z = sim.row(i).mapv(|v| v / tau);
        let lse = log_sum_exp(z.view());
        let w = 1.0 / pos.len() as f64;
        out.value += w * pos.iter().map(|&j| lse - z[j]).sum::<f64>();
        let mut g = grad_z.row_mut(i);
        for (k, zk) in z.iter().enumerate() {
            g[k] = (zk - lse).exp() * inv_n;
        }
        for &j in pos {
            g[j] -= w * inv_n;
        }
    }
    out.value *= inv_n;
    out.grad_tau = -(&grad_z * &sim).sum() / (tau * tau);
    out.grad_sim = grad_z / tau;
    out
}

fn transpose_positives(positives: &[Vec<usize>], n: usize) -> Vec<Vec<usize>> {
    let mut cols = vec![Vec::new(); n];
    for (i, pos) in positives.iter().enumerate() {
        for &j in pos {
            cols[j].push(i);
        }
    }
    cols
}

/// Image-to-text term with gradients.
pub fn loss_image_terms(batch: &TrainBatch, tau: f64) -> Result<LossTerms> {
    batch.check(tau)?;
    Ok(row_term(batch.sim.view(), &batch.positives, tau))
}

/// Text-to-image term (column-wise normalization) with gradients.
pub fn loss_text_terms(batch: &TrainBatch, tau: f64) -> Result<LossTerms> {
    batch.check(tau)?;
    let cols = transpose_positives(&batch.positives, batch.len());
    let mut t = row_term(batch.sim.t(), &cols, tau);
    t.grad_sim = t.grad_sim.reversed_axes();
    Ok(t)
}

/// Image and text terms and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct FtLoss {
    pub image: LossTerms,
    pub text: LossTerms,
    pub total: LossTerms,
}

pub fn loss_ft_terms(batch: &TrainBatch, tau: f64) -> Result<FtLoss> {
    let image = loss_image_terms(batch, tau)?;
    let text = loss_text_terms(batch, tau)?;
    let mut total = image.clone();
    total.add_scaled(&text, 1.0);
    Ok(FtLoss { image, text, total })
}

pub fn loss_image(batch: &TrainBatch, tau: f64) -> Result<f64> {
    Ok(loss_image_terms(batch, tau)?.value)
}

pub fn loss_text(batch: &TrainBatch, tau: f64) -> Result<f64> {
    Ok(loss_text_terms(batch, tau)?.value)
}

pub fn loss_ft(batch: &TrainBatch, tau: f64) -> Result<f64> {
    Ok(loss_ft_terms(batch, tau)?.total.value)
}

/// Narrows each image's positives to the same-class texts whose softmax
/// probability (over that image's current positives, at temperature `tau`)
/// is at least `p_min`. If none qualifies, the most probable text is kept,
/// lowest column winning ties.
pub fn threshold_mask(batch: &TrainBatch, tau: f64, p_min: f64) -> Result<TrainBatch> {
    batch.check(tau)?;
    let mut out = batch.clone();
    for i in 0..batch.len() {
        let pos = &batch.positives[i];
        if pos.is_empty() {
            continue;
        }
        let z: Array1<f64> = pos.iter().map(|&j| batch.sim[[i, j]] / tau).collect();
        let p = softmax(z.view());
        let mut kept: Vec<usize> = pos.iter().zip(&p).filter(|(_, &pj)| pj >= p_min).map(|(&j, _)| j).collect();
        if kept.is_empty() {
            let mut best = 0;
            for k in 1..p.len() {
                if p[k] > p[best] {
                    best = k;
                }
            }
            kept.push(pos[best]);
        }
        out.positives[i] = kept;
    }
    Ok(out)
}

/// For each class present in the batch (in order of first appearance), the
/// `(image, text)` index pair with the largest similarity among that class's
/// pairs. Ties go to the lowest image index, then the lowest text index.
pub fn max_pool_selection(batch: &TrainBatch) -> Vec<(usize, usize)> {
    let mut seen = Vec::new();
    let mut picks = Vec::new();
    for i in 0..batch.len() {
        let c = batch.labels[i];
        if seen.contains(&c) {
            continue;
        }
        seen.push(c);
        let group = batch.group(i);
        let mut best = (group[0], group[0]);
        for &a in &group {
            for &b in &group {
                if batch.sim[[a, b]] > batch.sim[[best.0, best.1]] {
                    best = (a, b);
                }
            }
        }
        picks.push(best);
    }
    picks
}

/// Symmetric loss over only the max-similarity pair of each class.
/// Gradients are scattered back into the full N×N shape.
pub fn instance_max_pool(batch: &TrainBatch, tau: f64) -> Result<LossTerms> {
    batch.check(tau)?;
    let picks = max_pool_selection(batch);
    let k = picks.len();
    let sub = Array2::from_shape_fn((k, k), |(a, b)| batch.sim[[picks[a].0, picks[b].1]]);
    let sub_batch = TrainBatch::new((0..k).collect(), sub)?;
    let ft = loss_ft_terms(&sub_batch, tau)?.total;
    let n = batch.len();
    let mut out = LossTerms::zeros(n, n);
    out.value = ft.value;
    out.grad_tau = ft.grad_tau;
    for a in 0..k {
        for b in 0..k {
            out.grad_sim[[picks[a].0, picks[b].1]] += ft.grad_sim[[a, b]];
        }
    }
    Ok(out)
}

/// Per-image class logits: mean similarity to the batch texts of each class
/// divided by `tau`. Classes are indexed by order of first appearance.
fn class_logits(sim: ArrayView2<f64>, labels: &[usize], tau: f64) -> (Array2<f64>, Vec<Vec<usize>>) {
    let mut classes: Vec<usize> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (j, &c) in labels.iter().enumerate() {
        match classes.iter().position(|&x| x == c) {
            Some(ix) => members[ix].push(j),
            None => {
                classes.push(c);
                members.push(vec![j]);
            }
        }
    }
    let logits = Array2::from_shape_fn((sim.nrows(), members.len()), |(i, c)| {
        members[c].iter().map(|&j| sim[[i, j]]).sum::<f64>() / (members[c].len() as f64 * tau)
    });
    (logits, members)
}

/// Pseudo-label cross-entropy. Soft labels come from the weak view
/// (`weak_sim`, no gradient); images whose top soft-label probability is
/// below `threshold` are dropped. Returns the mean over kept images with
/// gradients for `strong_sim` and `tau`.
pub fn pseudo_label_loss(
    strong_sim: &Array2<f64>,
    weak_sim: &Array2<f64>,
    labels: &[usize],
    tau: f64,
    threshold: f64,
) -> Result<LossTerms> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(LossError::InvalidTemperature(tau));
    }
    if strong_sim.iter().chain(weak_sim.iter()).any(|v| !v.is_finite()) {
        return Err(LossError::NonFiniteSimilarity);
    }
    let (n, m) = strong_sim.dim();
    let (strong, members) = class_logits(strong_sim.view(), labels, tau);
    let (weak, _) = class_logits(weak_sim.view(), labels, tau);
    let mut out = LossTerms::zeros(n, m);
    let kept: Vec<usize> = (0..n)
        .filter(|&i| softmax(weak.row(i)).fold(0.0f64, |a, &b| a.max(b)) >= threshold)
        .collect();
    if kept.is_empty() {
        return Ok(out);
    }
    let inv = 1.0 / kept.len() as f64;
    let mut grad_logits = Array2::<f64>::zeros(strong.dim());
    for &i in &kept {
        let q = softmax(weak.row(i));
        let lse = log_sum_exp(strong.row(i));
        out.value += inv * q.iter().zip(strong.row(i)).map(|(qc, lc)| qc * (lse - lc)).sum::<f64>();
        let p = softmax(strong.row(i));
        grad_logits.row_mut(i).assign(&((&p - &q) * inv));
    }
    for (c, cols) in members.iter().enumerate() {
        let scale = 1.0 / (cols.len() as f64 * tau);
        for &j in cols {
            let g = grad_logits.column(c).mapv(|v| v * scale);
            out.grad_sim.column_mut(j).scaled_add(1.0, &g);
        }
    }
    out.grad_tau = -(&out.grad_sim * strong_sim).sum() / tau;
    Ok(out)
}

/// `KL(p_teacher || p_student)` over each image's text logits, both scaled
/// by `1 / temperature`, averaged over images. The teacher side carries no
/// gradient.
pub fn distillation_loss(
    student_sim: &Array2<f64>,
    teacher_sim: &Array2<f64>,
    tau_student: f64,
    tau_teacher: f64,
    temperature: f64,
) -> Result<LossTerms> {
    for t in [tau_student, tau_teacher, temperature] {
        if !(t.is_finite() && t > 0.0) {
            return Err(LossError::InvalidTemperature(t));
        }
    }
    if student_sim.iter().chain(teacher_sim.iter()).any(|v| !v.is_finite()) {
        return Err(LossError::NonFiniteSimilarity);
    }
    let (n, m) = student_sim.dim();
    let mut out = LossTerms::zeros(n, m);
    if n == 0 {
        return Ok(out);
    }
    let scale_s = 1.0 / (tau_student * temperature);
    let scale_t = 1.0 / (tau_teacher * temperature);
    let mut grad_logits = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        let ls = student_sim.row(i).mapv(|v| v * scale_s);
        let lt = teacher_sim.row(i).mapv(|v| v * scale_t);
        let (lse_s, lse_t) = (log_sum_exp(ls.view()), log_sum_exp(lt.view()));
        for k in 0..m {
            let pt = (lt[k] - lse_t).exp();
            if pt > 0.0 {
                out.value += pt * ((lt[k] - lse_t) - (ls[k] - lse_s));
            }
            grad_logits[[i, k]] = ((ls[k] - lse_s).exp() - pt) / n as f64;
        }
    }
    out.value /= n as f64;
    // logits = S / (tau * T)
    out.grad_sim = &grad_logits * scale_s;
    out.grad_tau = -(&grad_logits * student_sim).sum() * scale_s / tau_student;
    Ok(out)
}

pub fn fixmatch_combine(l_ft: f64, l_pseudo: f64) -> f64 {
    l_ft + FIXMATCH_WEIGHT * l_pseudo
}

pub fn kd_combine(l_ft: f64, l_kd: f64) -> f64 {
    l_ft + KD_WEIGHT * l_kd
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn random_sim(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0))
    }

    /// Direct transcription of the image-side formula, no max subtraction.
    fn naive_image(sim: &Array2<f64>, labels: &[usize], tau: f64) -> f64 {
        let n = labels.len();
        let mut total = 0.0;
        for i in 0..n {
            let denom: f64 = (0..n).map(|r| (sim[[i, r]] / tau).exp()).sum();
            let g: Vec<usize> = (0..n).filter(|&j| labels[j] == labels[i]).collect();
            let inner: f64 = g.iter().map(|&j| ((sim[[i, j]] / tau).exp() / denom).ln()).sum();
            total += inner / g.len() as f64;
        }
        -total / n as f64
    }

    #[test]
    fn single_pair_is_zero() {
        let b = TrainBatch::new(vec![0], array![[0.3]]).unwrap();
        assert_eq!(loss_image(&b, 0.7).unwrap(), 0.0);
        assert_eq!(loss_text(&b, 0.7).unwrap(), 0.0);
        assert_eq!(loss_ft(&b, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn same_class_uniform_is_ln2() {
        let b = TrainBatch::new(vec![5, 5], Array2::zeros((2, 2))).unwrap();
        assert_abs_diff_eq!(loss_image(&b, 1.0).unwrap(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn distinct_pair_matches_summation() {
        let sim = array![[10.0, 0.0], [0.0, 10.0]];
        let b = TrainBatch::new(vec![0, 1], sim.clone()).unwrap();
        let expected = naive_image(&sim, &[0, 1], 1.0);
        assert_abs_diff_eq!(loss_image(&b, 1.0).unwrap(), expected, epsilon = 1e-8);
        // InfoNCE: -log(e^10 / (e^10 + 1))
        assert_abs_diff_eq!(expected, (1.0 + (-10f64).exp()).ln(), epsilon = 1e-12);
    }

    #[test]
    fn stable_for_large_logits() {
        let b = TrainBatch::new(vec![0, 1], array![[1.0, -1.0], [-1.0, 1.0]]).unwrap();
        let v = loss_ft(&b, 1e-3).unwrap();
        assert!(v.is_finite());
        assert!(v >= 0.0);
    }

    #[test]
    fn matches_naive_formula_on_random_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..10);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let sim = random_sim(&mut rng, n);
            let tau = rng.random_range(0.2..2.0);
            let b = TrainBatch::new(labels.clone(), sim.clone()).unwrap();
            assert_abs_diff_eq!(loss_image(&b, tau).unwrap(), naive_image(&sim, &labels, tau), epsilon = 1e-10);
            let bt = TrainBatch::new(labels.clone(), sim.t().to_owned()).unwrap();
            assert_abs_diff_eq!(loss_text(&b, tau).unwrap(), loss_image(&bt, tau).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetric_sim_gives_equal_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_sim(&mut rng, 6);
        let sym = &a + &a.t();
        let b = TrainBatch::new(vec![0, 1, 0, 2, 1, 0], sym).unwrap();
        assert_abs_diff_eq!(loss_text(&b, 0.5).unwrap(), loss_image(&b, 0.5).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn uniform_similarity_gives_log_n_per_term() {
        for n in [2usize, 5, 9] {
            let b = TrainBatch::new((0..n).collect(), Array2::from_elem((n, n), 0.37)).unwrap();
            for tau in [0.05, 1.0, 4.0] {
                assert_abs_diff_eq!(loss_image(&b, tau).unwrap(), (n as f64).ln(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        let b = TrainBatch::new(vec![0, 1], array![[f64::NAN, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(loss_image(&b, 1.0), Err(LossError::NonFiniteSimilarity));
        let b = TrainBatch::new(vec![0, 1], Array2::zeros((2, 2))).unwrap();
        assert!(matches!(loss_ft(&b, 0.0), Err(LossError::InvalidTemperature(_))));
        assert!(matches!(TrainBatch::new(vec![0], Array2::zeros((2, 2))), Err(LossError::Shape { .. })));
    }

    #[test]
    fn groups_are_an_equivalence_partition() {
        let b = TrainBatch::new(vec![2, 0, 2, 1, 0, 2], Array2::zeros((6, 6))).unwrap();
        for i in 0..6 {
            assert!(b.group(i).contains(&i));
            for j in b.group(i) {
                assert!(b.group(j).contains(&i));
            }
            assert_eq!(b.column_positives(i), b.group(i));
        }
    }

    #[test]
    fn threshold_keeps_confident_text() {
        // image 0 with its only same-class text (itself): p = 1
        let b = TrainBatch::new(vec![0, 1], array![[0.9, 0.1], [0.2, 0.3]]).unwrap();
        let m = threshold_mask(&b, 1.0, 0.5).unwrap();
        assert_eq!(m.positives(0), &[0]);
    }

    #[test]
    fn threshold_two_texts() {
        // softmax([a, b]) = (0.6, 0.4) when a - b = ln(1.5)
        let d = 1.5f64.ln();
        let b = TrainBatch::new(vec![0, 0], array![[d, 0.0], [0.0, 0.0]]).unwrap();
        let m = threshold_mask(&b, 1.0, 0.5).unwrap();
        assert_eq!(m.positives(0), &[0]);
        // row 1 is uniform (0.5, 0.5): both meet the threshold
        assert_eq!(m.positives(1), &[0, 1]);
    }

    #[test]
    fn threshold_falls_back_to_argmax() {
        let b = TrainBatch::new(vec![0, 0, 0], array![[0.1, 0.3, 0.2], [0.0, 0.0, 0.0], [0.5, 0.5, 0.1]]).unwrap();
        let m = threshold_mask(&b, 1.0, 0.5).unwrap();
        assert_eq!(m.positives(0), &[1]);
        assert_eq!(m.positives(1), &[0]);
        assert_eq!(m.positives(2), &[0]);
        // masked batch with a column nobody keeps still yields a finite loss
        assert!(loss_ft(&m, 1.0).unwrap().is_finite());
        assert!(m.column_positives(2).is_empty());
    }

    #[test]
    fn max_pool_with_distinct_classes_is_plain_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sim = random_sim(&mut rng, 5);
        let b = TrainBatch::new(vec![0, 1, 2, 3, 4], sim).unwrap();
        let mp = instance_max_pool(&b, 0.7).unwrap();
        let ft = loss_ft_terms(&b, 0.7).unwrap().total;
        assert_abs_diff_eq!(mp.value, ft.value, epsilon = 1e-12);
        assert!(max_abs_diff(&mp.grad_sim, &ft.grad_sim) < 1e-12);
    }

    #[test]
    fn max_pool_uses_only_best_pair() {
        let sim = array![[0.1, 0.2, 0.0], [0.9, 0.3, 0.0], [0.0, 0.0, 0.5]];
        let b = TrainBatch::new(vec![7, 7, 3], sim).unwrap();
        assert_eq!(max_pool_selection(&b), vec![(1, 0), (2, 2)]);
        let mp = instance_max_pool(&b, 1.0).unwrap();
        let sub = TrainBatch::new(vec![0, 1], array![[0.9, 0.0], [0.0, 0.5]]).unwrap();
        assert_abs_diff_eq!(mp.value, loss_ft(&sub, 1.0).unwrap(), epsilon = 1e-12);
        // unselected entries get no gradient
        assert_eq!(mp.grad_sim[[0, 0]], 0.0);
        assert_eq!(mp.grad_sim[[1, 1]], 0.0);
    }

    #[test]
    fn max_pool_ties_pick_lowest_index() {
        let b = TrainBatch::new(vec![0, 0], Array2::from_elem((2, 2), 0.4)).unwrap();
        assert_eq!(max_pool_selection(&b), vec![(0, 0)]);
    }

    #[test]
    fn combine_weights() {
        assert_eq!(fixmatch_combine(2.0, 0.0), 2.0);
        assert_abs_diff_eq!(fixmatch_combine(0.0, 3.0), 0.99, epsilon = 1e-15);
        assert_abs_diff_eq!(fixmatch_combine(1.0, 3.0), 1.99, epsilon = 1e-15);
        assert_eq!(kd_combine(1.5, 0.0), 1.5);
        assert_eq!(kd_combine(1.0, 0.25), 2.0);
    }

    #[test]
    fn kd_identical_logits_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sim = random_sim(&mut rng, 4);
        let kd = distillation_loss(&sim, &sim, 0.5, 0.5, KD_TEMPERATURE).unwrap();
        assert_abs_diff_eq!(kd.value, 0.0, epsilon = 1e-15);
        assert!(kd.grad_sim.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn kd_two_logit_hand_value() {
        // student logits (0, 0), teacher logits (3, 0); both /3 -> (0,0) and (1,0)
        let student = array![[0.0, 0.0]];
        let teacher = array![[3.0, 0.0]];
        let kd = distillation_loss(&student, &teacher, 1.0, 1.0, 3.0).unwrap();
        let pt1 = 1f64.exp() / (1f64.exp() + 1.0);
        let pt2 = 1.0 - pt1;
        let expected = pt1 * (pt1 / 0.5).ln() + pt2 * (pt2 / 0.5).ln();
        assert_abs_diff_eq!(kd.value, expected, epsilon = 1e-12);
    }

    #[test]
    fn pseudo_labels_thresholded() {
        // weak view uniform over two classes (max prob 0.5 passes, exactly at threshold)
        let labels = vec![0, 1];
        let weak = array![[0.0, 0.0], [0.0, 0.0]];
        let strong = array![[1.0, 0.0], [0.0, 1.0]];
        let l = pseudo_label_loss(&strong, &weak, &labels, 1.0, 0.5).unwrap();
        let expected = 0.5 * (1.0 + 1f64.exp()).ln() + 0.5 * ((1.0 + 1f64.exp()).ln() - 1.0);
        assert_abs_diff_eq!(l.value, expected, epsilon = 1e-12);
        let none = pseudo_label_loss(&strong, &weak, &labels, 1.0, 0.9).unwrap();
        assert_eq!(none.value, 0.0);
    }
}
