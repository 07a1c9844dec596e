//! Hand-built models used by tests, benches and the CLI.

use crate::graph::{
    CombinerKind, Connection, DataType, Hyperparams, LossBinding, LossKind, ModelGraph,
    ModelInputSpec, ModelOutputSpec, NetworkParams, NetworkType, PrimaryNetworkSpec,
};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nnet::{Activation, Initializer};
use crate::runtime::ColumnGroups;

fn net(id: &str, ntype: NetworkType, ns: Vec<usize>) -> PrimaryNetworkSpec {
    let params = NetworkParams::uniform(
        Initializer::XavierUniform,
        Activation::Relu,
        ntype.head_activation(),
        ns,
    )
    .expect("preset shapes are valid");
    PrimaryNetworkSpec::new(id, ntype, params, CombinerKind::Concat).expect("preset network")
}

fn conn(id: u32, source: &str, target: &str, subset: Vec<usize>) -> Connection {
    Connection::new(id, source, target, subset).expect("preset connection")
}

/// The small three-task example model: one 10-feature numeric input, five
/// networks and three outputs (5 sample features, 1 regression value,
/// 3 classes).
///
/// `n0` encodes a 5-feature subset of `i0`, `n1` mixes `i0` with `n0`, `n3`
/// regresses from `n1`, `n2` classifies from `n3`, and `n4` decodes from
/// `n0`. Loss weights are 0.5 (KL at `n0`), 0.8 (sample likelihood at
/// `n4`), 0.9 (MSE at `n3`) and 1.0 (cross entropy at `n2`).
pub fn three_task_reference() -> ModelGraph {
    let inputs = vec![ModelInputSpec::new("i0", 10, DataType::Numeric).unwrap()];
    let outputs = vec![
        ModelOutputSpec::new("o0", 5, DataType::Samples, CombinerKind::Add).unwrap(),
        ModelOutputSpec::new("o1", 1, DataType::Numeric, CombinerKind::Add).unwrap(),
        ModelOutputSpec::new("o2", 3, DataType::Discrete, CombinerKind::Add).unwrap(),
    ];
    let mut g = ModelGraph::new(inputs, outputs);
    g.networks = vec![
        net("n0", NetworkType::GenericMlp, vec![12, 7]),
        net("n1", NetworkType::GenericMlp, vec![16, 8]),
        net("n2", NetworkType::Discretizer, vec![8, 3]),
        net("n3", NetworkType::GenericMlp, vec![8, 1]),
        net("n4", NetworkType::Decoder, vec![10, 5]),
    ];
    let all = |w: usize| (0..w).collect::<Vec<_>>();
    g.connections = vec![
        conn(0, "i0", "n0", vec![0, 2, 5, 6, 7]),
        conn(1, "i0", "n1", all(10)),
        conn(2, "n0", "n1", all(7)),
        // The decoder splits its input into mean and log-variance halves,
        // so it takes an even-width slice of n0.
        conn(3, "n0", "n4", all(6)),
        conn(4, "n1", "n3", all(8)),
        conn(5, "n3", "n2", all(1)),
        conn(6, "n4", "o0", all(5)),
        conn(7, "n3", "o1", all(1)),
        conn(8, "n2", "o2", all(3)),
    ];
    g.losses = vec![
        LossBinding::new(LossKind::SampleNll, "n4", "S", 0.8).unwrap(),
        LossBinding::new(LossKind::Mse, "n3", "R", 0.9).unwrap(),
        LossBinding::new(LossKind::CrossEntropy, "n2", "C", 1.0).unwrap(),
        LossBinding::kl("n0", 0.5).unwrap(),
    ];
    g.deleted_at_inference.insert(crate::graph::ConnectionId(3));
    g
}

/// Layer sizes for [`three_task_images`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageModelShape {
    pub pixels: usize,
    pub bins: usize,
    pub classes: usize,
    pub latent: usize,
    pub encoder_hidden: usize,
    pub shared_hidden: usize,
    pub decoder_hidden: usize,
}

impl Default for ImageModelShape {
    fn default() -> Self {
        Self {
            pixels: 784,
            bins: 32,
            classes: 10,
            latent: 32,
            encoder_hidden: 256,
            shared_hidden: 128,
            decoder_hidden: 512,
        }
    }
}

/// The same five-network layout sized for image data: samples, histogram
/// regression and class prediction over `pixels`-wide images.
///
/// Differs from [`three_task_reference`] in two places: the classifier
/// reads the shared features of `n1` instead of the regression head, and
/// losses sit on the model outputs. `betas` are (mse, cross entropy, sample
/// likelihood, KL).
pub fn three_task_images(shape: &ImageModelShape, betas: [f64; 4]) -> ModelGraph {
    let s = shape;
    let inputs = vec![ModelInputSpec::new("i0", s.pixels, DataType::Numeric).unwrap()];
    let outputs = vec![
        ModelOutputSpec::new("o0", s.pixels, DataType::Samples, CombinerKind::Add).unwrap(),
        ModelOutputSpec::new("o1", s.bins, DataType::Numeric, CombinerKind::Add).unwrap(),
        ModelOutputSpec::new("o2", s.classes, DataType::Discrete, CombinerKind::Add).unwrap(),
    ];
    let mut g = ModelGraph::new(inputs, outputs);
    let code = 2 * s.latent;
    g.networks = vec![
        net("n0", NetworkType::GenericMlp, vec![s.encoder_hidden, code]),
        net(
            "n1",
            NetworkType::GenericMlp,
            vec![s.shared_hidden, s.shared_hidden],
        ),
        net("n2", NetworkType::Discretizer, vec![s.classes]),
        net("n3", NetworkType::GenericMlp, vec![s.shared_hidden, s.bins]),
        net("n4", NetworkType::Decoder, vec![s.decoder_hidden, s.pixels]),
    ];
    let all = |w: usize| (0..w).collect::<Vec<_>>();
    g.connections = vec![
        conn(0, "i0", "n0", all(s.pixels)),
        conn(1, "i0", "n1", all(s.pixels)),
        conn(2, "n0", "n1", all(code)),
        conn(3, "n0", "n4", all(code)),
        conn(4, "n1", "n3", all(s.shared_hidden)),
        conn(5, "n1", "n2", all(s.shared_hidden)),
        conn(6, "n4", "o0", all(s.pixels)),
        conn(7, "n3", "o1", all(s.bins)),
        conn(8, "n2", "o2", all(s.classes)),
    ];
    let [mse, xent, nll, kl] = betas;
    g.losses = vec![
        LossBinding::new(LossKind::SampleNll, "o0", "S", nll).unwrap(),
        LossBinding::new(LossKind::Mse, "o1", "R", mse).unwrap(),
        LossBinding::new(LossKind::CrossEntropy, "o2", "C", xent).unwrap(),
        LossBinding::kl("n0", kl).unwrap(),
    ];
    g.deleted_at_inference.insert(crate::graph::ConnectionId(3));
    g.hyper = Hyperparams::default();
    g
}

/// [`three_task_images`] with a second encoder `n5` (reading `i0`) feeding
/// the decoder. The decoder folds its inputs in connection-id order, so
/// `n5` (connection 3) supplies the latent means and `n0` (connection 10)
/// the log-variances. Only the `n0` input is replaced by noise at
/// inference, which keeps samples conditioned on the input image.
pub fn conditioned_images(shape: &ImageModelShape, betas: [f64; 4]) -> ModelGraph {
    let mut g = three_task_images(shape, betas);
    let l = shape.latent;
    g.networks.push(net(
        "n5",
        NetworkType::GenericMlp,
        vec![shape.encoder_hidden, l],
    ));
    let all = |w: usize| (0..w).collect::<Vec<_>>();
    g.connections.retain(|c| c.id.0 != 3);
    g.connections.push(conn(3, "n5", "n4", all(l)));
    g.connections.push(conn(9, "i0", "n5", all(shape.pixels)));
    g.connections.push(conn(10, "n0", "n4", all(l)));
    g.connections.sort_by_key(|c| c.id);
    g.losses.push(LossBinding::kl("n5", betas[3]).unwrap());
    g.deleted_at_inference = [crate::graph::ConnectionId(10)].into();
    g
}

/// Synthetic data matching [`three_task_reference`]: `i0` uniform in
/// [0, 1]^10, `S` = first five features, `R` = feature mean, `C` one-hot over
/// three classes chosen by which third of the features has the largest sum.
pub fn reference_data(rows: usize, seed: u64) -> ColumnGroups {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((rows, 10), || rng.random::<f64>());
    let s = x.slice(ndarray::s![.., ..5]).to_owned();
    let r = x.mean_axis(Axis(1)).expect("nonempty").insert_axis(Axis(1));
    let mut c = Array2::zeros((rows, 3));
    for (i, row) in x.rows().into_iter().enumerate() {
        let sums = [
            row.slice(ndarray::s![0..3]).sum(),
            row.slice(ndarray::s![3..6]).sum(),
            row.slice(ndarray::s![6..9]).sum(),
        ];
        let k = (0..3).fold(0, |b, k| if sums[k] > sums[b] { k } else { b });
        c[[i, k]] = 1.0;
    }
    ColumnGroups::new()
        .with("i0", x)
        .with("S", s)
        .with("R", r)
        .with("C", c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validator::validate;

    #[test]
    fn presets_validate() {
        let r = validate(&three_task_reference());
        assert!(r.ok, "{:?}", r.violations);
        let r = validate(&three_task_images(
            &ImageModelShape::default(),
            [1.0, 1.0, 1.0, 1e-4],
        ));
        assert!(r.ok, "{:?}", r.violations);
        let g = conditioned_images(&ImageModelShape::default(), [1.0, 1.0, 1.0, 1e-4]);
        let r = validate(&g);
        assert!(r.ok, "{:?}", r.violations);
        assert_eq!(g.incoming("n4").len(), 2);
    }
}
