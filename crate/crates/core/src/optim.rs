//! Minibatch SGD with Nesterov momentum and L2 weight decay.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{homogenize_refs, Entry, PointSet};
use crate::error::{GconvError, Result};
use crate::network::{argmax_rows, Geometry, Gradients, Network, ParamKind};

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Applied to weights only, never to biases.
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            l2: 1e-4,
            batch_size: 64,
            epochs: 5,
            seed: 42,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GconvError::InvalidParameter(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad(format!("l2 must be >= 0, got {}", self.l2));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be >= 1".into());
        }
        Ok(())
    }
}

/// One Nesterov update in place:
/// `g' = g + l2·w`, `v ← m·v − lr·g'`, `w ← w + m·v − lr·g'`.
pub fn sgd_step(params: &mut [f64], velocity: &mut [f64], grads: &[f64], cfg: &SgdConfig, decay: bool) {
    let l2 = if decay { cfg.l2 } else { 0.0 };
    for ((w, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        let g = g + l2 * *w;
        *v = cfg.momentum * *v - cfg.learning_rate * g;
        *w += cfg.momentum * *v - cfg.learning_rate * g;
    }
}

/// Entries with their class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    entries: Vec<Entry>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(entries: Vec<Entry>, labels: Vec<usize>) -> Result<Self> {
        if entries.len() != labels.len() {
            return Err(GconvError::LengthMismatch {
                what: "labels vs entries",
                expected: entries.len(),
                actual: labels.len(),
            });
        }
        Ok(Self { entries, labels })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Splits `indices` into runs that share one point set (same `Arc`), in
/// order of first appearance.
fn group_by_domain(data: &Dataset, indices: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in indices {
        let pts = data.entries[i].points();
        match groups
            .iter_mut()
            .find(|g| Arc::ptr_eq(data.entries[g[0]].points(), pts))
        {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Remembers the geometry of the last point set seen; a static domain is
/// prepared once per run.
#[derive(Default)]
struct GeometryCache {
    last: Option<(Arc<PointSet>, Geometry)>,
}

impl GeometryCache {
    fn get(&mut self, net: &Network, points: &Arc<PointSet>) -> &Geometry {
        let hit = matches!(&self.last, Some((p, _)) if Arc::ptr_eq(p, points));
        if !hit {
            self.last = Some((Arc::clone(points), net.prepare(points.coords())));
        }
        &self.last.as_ref().expect("filled above").1
    }
}

pub struct Trainer<'a> {
    net: &'a mut Network,
    cfg: SgdConfig,
    velocity: Gradients,
    cache: GeometryCache,
}

impl<'a> Trainer<'a> {
    pub fn new(net: &'a mut Network, cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        let velocity = net.zero_gradients();
        Ok(Self {
            net,
            cfg,
            velocity,
            cache: GeometryCache::default(),
        })
    }

    /// One update on the minibatch `indices`; returns the per-entry losses
    /// measured before the update.
    pub fn step(&mut self, data: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
        let scale = indices.len() as f64;
        let mut grads = self.net.zero_gradients();
        let mut losses = vec![0.0; indices.len()];
        for group in group_by_domain(data, indices) {
            let entries: Vec<&Entry> = group.iter().map(|&i| &data.entries[i]).collect();
            let labels: Vec<usize> = group.iter().map(|&i| data.labels[i]).collect();
            let batch = homogenize_refs(&entries)?;
            let geo = self.cache.get(self.net, batch.points());
            let (group_losses, g) = self.net.loss_and_gradients(batch.values().view(), &labels, geo, scale)?;
            grads.add_assign(&g);
            for (&i, l) in group.iter().zip(group_losses) {
                let pos = indices.iter().position(|&j| j == i).expect("member of batch");
                losses[pos] = l;
            }
        }
        let cfg = &self.cfg;
        self.net.for_each_param(&grads, &mut self.velocity, |kind, w, g, v| {
            sgd_step(w, v, g, cfg, kind == ParamKind::Weight)
        });
        Ok(losses)
    }
}

/// Mean cross-entropy and error rate of `net` on `data`.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(GconvError::EmptyDataset);
    }
    let mut cache = GeometryCache::default();
    let mut losses = vec![0.0; data.len()];
    let mut wrong = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(256) {
        for group in group_by_domain(data, chunk) {
            let entries: Vec<&Entry> = group.iter().map(|&i| &data.entries[i]).collect();
            let labels: Vec<usize> = group.iter().map(|&i| data.labels[i]).collect();
            let batch = homogenize_refs(&entries)?;
            let geo = cache.get(net, batch.points());
            let logits = net.predict(batch.values().view(), geo)?;
            let (l, _) = crate::network::softmax_xent_forward(logits.view(), &labels)?;
            for (k, &i) in group.iter().enumerate() {
                losses[i] = l[k];
            }
            wrong += argmax_rows(logits.view())
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p != l)
                .count();
        }
    }
    Ok((losses.iter().sum::<f64>() / data.len() as f64, wrong as f64 / data.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss over the epoch's minibatches, each measured before its update.
    pub train_loss: f64,
    pub test_error: f64,
}

pub fn train(net: &mut Network, train_set: &Dataset, test_set: &Dataset, cfg: &SgdConfig) -> Result<Vec<EpochMetrics>> {
    train_with_callback(net, train_set, test_set, cfg, |_| {})
}

/// Shuffled minibatch epochs; `on_epoch` sees each epoch's metrics as they
/// are produced.
pub fn train_with_callback(
    net: &mut Network,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &SgdConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    if train_set.is_empty() || test_set.is_empty() {
        return Err(GconvError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trainer = Trainer::new(net, cfg.clone())?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        // summed in index order so the value does not depend on the shuffle
        let mut sample_losses = vec![0.0; train_set.len()];
        for chunk in order.chunks(cfg.batch_size) {
            let losses = trainer.step(train_set, chunk)?;
            for (&i, l) in chunk.iter().zip(losses) {
                sample_losses[i] = l;
            }
        }
        let train_loss = sample_losses.iter().sum::<f64>() / train_set.len() as f64;
        let (_, test_error) = evaluate(trainer.net, test_set)?;
        let m = EpochMetrics {
            epoch,
            train_loss,
            test_error,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(metrics)
}

/// `epoch,train_loss,test_error` CSV with shortest round-trip floats.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,test_error\n");
    for m in metrics {
        let _ = writeln!(s, "{},{},{}", m.epoch, m.train_loss, m.test_error);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_entry;
    use crate::network::{DenseLayer, Layer};
    use ndarray::array;

    fn cfg(lr: f64, momentum: f64, l2: f64) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            momentum,
            l2,
            batch_size: 1,
            epochs: 1,
            seed: 0,
        }
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut w = [1.0, -2.0];
        let mut v = [0.0, 0.0];
        sgd_step(&mut w, &mut v, &[0.5, 1.0], &cfg(0.1, 0.0, 0.0), true);
        assert_eq!(w, [1.0 - 0.05, -2.0 - 0.1]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut w = [3.0];
        let mut v = [0.0];
        sgd_step(&mut w, &mut v, &[0.0], &cfg(0.1, 0.9, 0.0), true);
        assert_eq!(w, [3.0]);
    }

    #[test]
    fn nesterov_on_a_quadratic_two_steps() {
        // f(w) = w^2 / 2, gradient = w; lr 0.1, m 0.9, w0 = 1
        let c = cfg(0.1, 0.9, 0.0);
        let mut w = [1.0];
        let mut v = [0.0];
        let g = [w[0]];
        sgd_step(&mut w, &mut v, &g, &c, true);
        // v1 = -0.1; w1 = 1 + 0.9*(-0.1) - 0.1 = 0.81
        assert!((v[0] + 0.1).abs() < 1e-15);
        assert!((w[0] - 0.81).abs() < 1e-15);
        let g = [w[0]];
        sgd_step(&mut w, &mut v, &g, &c, true);
        // v2 = -0.09 - 0.081 = -0.171; w2 = 0.81 - 0.1539 - 0.081 = 0.5751
        assert!((v[0] + 0.171).abs() < 1e-15);
        assert!((w[0] - 0.5751).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_shrinks_norm() {
        let c = cfg(0.1, 0.9, 0.01);
        let mut w = [1.0, -3.0, 0.5];
        let mut v = [0.0; 3];
        let mut norm = w.iter().map(|x| x * x).sum::<f64>();
        for _ in 0..20 {
            sgd_step(&mut w, &mut v, &[0.0; 3], &c, true);
            let n = w.iter().map(|x| x * x).sum::<f64>();
            assert!(n < norm);
            norm = n;
        }
        // biases are exempt
        let mut b = [1.0];
        let mut vb = [0.0];
        sgd_step(&mut b, &mut vb, &[0.0], &c, false);
        assert_eq!(b, [1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(SgdConfig::default().validate().is_ok());
        assert!(SgdConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(SgdConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(SgdConfig { l2: -1.0, ..Default::default() }.validate().is_err());
    }

    fn toy() -> (Network, Dataset) {
        let net = Network::new(vec![Layer::Dense(
            DenseLayer::new(array![[0.1], [-0.1]], array![0.0, 0.0]).unwrap(),
        )]);
        let e1 = make_entry(vec![crate::Point::new(0.0, 0.0)], array![[1.0]]).unwrap();
        let e2 = make_entry(vec![crate::Point::new(0.0, 0.0)], array![[-1.0]]).unwrap();
        (net, Dataset::new(vec![e1, e2], vec![0, 1]).unwrap())
    }

    #[test]
    fn first_epoch_loss_decreases_each_step() {
        let (mut net, data) = toy();
        let c = SgdConfig {
            learning_rate: 0.5,
            momentum: 0.0,
            l2: 0.0,
            batch_size: 1,
            epochs: 1,
            seed: 1,
        };
        let mut before = evaluate(&net, &data).unwrap().0;
        let mut trainer = Trainer::new(&mut net, c).unwrap();
        for i in [0, 1] {
            trainer.step(&data, &[i]).unwrap();
            let after = evaluate(trainer.net, &data).unwrap().0;
            assert!(after < before);
            before = after;
        }
    }

    #[test]
    fn zero_learning_rate_keeps_metrics_constant() {
        let (mut net, data) = toy();
        let c = SgdConfig {
            learning_rate: 0.0,
            epochs: 4,
            batch_size: 1,
            ..Default::default()
        };
        let m = train(&mut net, &data, &data, &c).unwrap();
        assert!(m.windows(2).all(|w| w[0].train_loss == w[1].train_loss && w[0].test_error == w[1].test_error));
    }

    #[test]
    fn fixed_seed_reproduces_metrics() {
        let run = || {
            let (mut net, data) = toy();
            let c = SgdConfig { epochs: 3, batch_size: 1, learning_rate: 0.3, ..Default::default() };
            metrics_csv(&train(&mut net, &data, &data, &c).unwrap())
        };
        assert_eq!(run(), run());
        assert!(run().starts_with("epoch,train_loss,test_error\n1,"));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let (mut net, data) = toy();
        let empty = Dataset::new(vec![], vec![]).unwrap();
        assert!(matches!(train(&mut net, &empty, &data, &SgdConfig::default()), Err(GconvError::EmptyDataset)));
        assert!(Dataset::new(vec![], vec![1]).is_err());
    }
}
