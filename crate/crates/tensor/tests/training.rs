use cse_tensor::{
    batch_loss, train_step, Adam, AdamConfig, Container, LayerKind, LayerSpec, Mode, Module, ParamSet, Result, Rng,
    Tape, Tensor, Var,
};

struct Mlp {
    ps: ParamSet,
}

impl Mlp {
    fn layers() -> Vec<LayerSpec> {
        vec![
            LayerSpec::new("hidden", LayerKind::Dense { inputs: 3, outputs: 4 }, &[3]),
            LayerSpec::new("out", LayerKind::Dense { inputs: 4, outputs: 2 }, &[4]),
        ]
    }

    fn new(seed: u64) -> Self {
        let mut rng = Rng::new(seed, 0);
        Self {
            ps: ParamSet::init(&Self::layers(), &mut rng).unwrap(),
        }
    }
}

impl Module for Mlp {
    fn name(&self) -> &str {
        "mlp"
    }
    fn params(&self) -> &ParamSet {
        &self.ps
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.ps
    }
    fn forward(&self, tape: &mut Tape, inputs: &[Tensor], mode: Mode, rng: &mut Rng) -> Result<Var> {
        let ps = &self.ps;
        let x = tape.input(inputs[0].clone(), "in");
        let h = tape.dense(ps, x, ps.id("hidden.weight")?, ps.id("hidden.bias")?, "hidden")?;
        let h = tape.relu(h, "relu");
        let h = tape.dropout(h, 0.2, mode, rng, "dropout")?;
        tape.dense(ps, h, ps.id("out.weight")?, ps.id("out.bias")?, "out")
    }
}

fn sample() -> Vec<Tensor> {
    vec![Tensor::vector(vec![1.0, -0.5, 2.0])]
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut m = Mlp::new(3);
    let before = m.ps.records();
    let mut opt = Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, &m.ps);
    let x = sample();
    let mut rng = Rng::new(3, 1);
    for _ in 0..5 {
        train_step(&mut m, &[&x[..]], &[1], &mut opt, &mut rng).unwrap();
    }
    assert_eq!(m.ps.records(), before);
}

#[test]
fn separable_point_converges() {
    let mut m = Mlp::new(4);
    let mut opt = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &m.ps);
    let x = sample();
    let mut rng = Rng::new(4, 1);
    let mut prev = f64::INFINITY;
    for _ in 0..200 {
        let loss = batch_loss(&mut m, &[&x[..]], &[1], Mode::Eval, &mut rng, false).unwrap();
        assert!(loss < prev, "loss rose: {loss} >= {prev}");
        prev = loss;
        m.ps.zero_grads();
        batch_loss(&mut m, &[&x[..]], &[1], Mode::Eval, &mut rng, true).unwrap();
        opt.step(&mut m.ps);
    }
    assert!(prev < 0.01, "final loss {prev}");
}

#[test]
fn equal_seeds_give_identical_trajectories() {
    let run = || {
        let mut m = Mlp::new(9);
        let mut opt = Adam::new(AdamConfig::default(), &m.ps);
        let mut rng = Rng::new(9, 2);
        let x = sample();
        for _ in 0..20 {
            train_step(&mut m, &[&x[..], &x[..]], &[0, 1], &mut opt, &mut rng).unwrap();
        }
        m.ps.records()
    };
    let (a, b) = (run(), run());
    for ((_, ta), (_, tb)) in a.iter().zip(&b) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ta), bits(tb));
    }
}

#[test]
fn non_finite_forward_names_the_layer() {
    let mut m = Mlp::new(5);
    let id = m.ps.id("hidden.weight").unwrap();
    m.ps.value_mut(id).data_mut()[0] = f64::NAN;
    let mut opt = Adam::new(AdamConfig::default(), &m.ps);
    let x = sample();
    let mut rng = Rng::new(5, 1);
    let err = train_step(&mut m, &[&x[..]], &[0], &mut opt, &mut rng).unwrap_err();
    assert!(err.to_string().contains("hidden"), "{err}");
}

#[test]
fn checkpoint_round_trip_and_shape_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mlp.ckpt");
    let m = Mlp::new(6);
    Container::from_params("mlp", &m.ps).save(&path).unwrap();

    let loaded = Container::load(&path).unwrap();
    let mut fresh = Mlp::new(7);
    fresh.ps.load_values(&loaded.records).unwrap();
    assert_eq!(fresh.ps.records(), m.ps.records());

    let mut wrong = loaded.clone();
    wrong.records[0].1 = Tensor::zeros(&[4, 3]);
    assert!(fresh.ps.load_values(&wrong.records).is_err());
}
