use maesil::nn::{Grads, ParamStore, Tensor2};
use maesil::rng::SeededRng;
use maesil::training::{adam_step, AdamConfig, AdamState};

/// Scalar reference, one coordinate at a time.
struct Oracle {
    theta: f64,
    m: f64,
    v: f64,
}

impl Oracle {
    fn step(&mut self, g: f64, t: i32, c: &AdamConfig) {
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * g;
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * g * g;
        let mh = self.m / (1.0 - c.beta1.powi(t));
        let vh = self.v / (1.0 - c.beta2.powi(t));
        self.theta -= c.lr * mh / (vh.sqrt() + c.eps) + c.lr * c.weight_decay * self.theta;
    }
}

fn store(rng: &mut SeededRng) -> ParamStore<f64> {
    let mut ps = ParamStore::new();
    ps.insert("a", Tensor2::from_fn(3, 4, |_, _| rng.unit_f64() - 0.5), 2);
    ps.insert("b", Tensor2::from_fn(1, 5, |_, _| rng.unit_f64()), 1);
    ps
}

fn random_grads(ps: &ParamStore<f64>, rng: &mut SeededRng) -> Grads<f64> {
    let mut g = Grads::new();
    for (name, p) in ps.iter() {
        let (r, c) = p.value.shape();
        g.add(name, &Tensor2::from_fn(r, c, |_, _| (rng.unit_f64() - 0.5) * 4.0));
    }
    g
}

#[test]
fn matches_scalar_oracle_over_100_steps() {
    let cfg = AdamConfig {
        lr: 3e-3,
        beta1: 0.9,
        beta2: 0.95,
        eps: 1e-8,
        weight_decay: 0.05,
    };
    let mut rng = SeededRng::new(11, 0);
    let mut ps = store(&mut rng);
    let mut oracles: Vec<(String, usize, Oracle)> = ps
        .iter()
        .flat_map(|(n, p)| {
            p.value.data.iter().enumerate().map(move |(i, &x)| {
                (
                    n.clone(),
                    i,
                    Oracle {
                        theta: x,
                        m: 0.0,
                        v: 0.0,
                    },
                )
            })
        })
        .collect();
    let mut state = AdamState::for_params(&ps);
    let mut worst = 0.0f64;
    for t in 1..=100 {
        let g = random_grads(&ps, &mut rng);
        adam_step(&mut ps, &g, &mut state, &cfg).unwrap();
        for (name, i, o) in oracles.iter_mut() {
            o.step(g.get(name).unwrap().data[*i], t, &cfg);
            worst = worst.max((ps.value(name).data[*i] - o.theta).abs());
        }
    }
    assert_eq!(state.t, 100);
    assert!(worst <= 1e-12, "max deviation {worst:e}");
}

#[test]
fn trajectory_is_deterministic() {
    let run = || {
        let mut rng = SeededRng::new(5, 0);
        let mut ps = store(&mut rng);
        let mut st = AdamState::for_params(&ps);
        for _ in 0..20 {
            let g = random_grads(&ps, &mut rng);
            adam_step(&mut ps, &g, &mut st, &AdamConfig::default()).unwrap();
        }
        ps.iter()
            .flat_map(|(_, p)| p.value.data.iter().map(|v| v.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_gradient_leaves_state_untouched() {
    let mut rng = SeededRng::new(1, 0);
    let mut ps = store(&mut rng);
    let before = ps.clone();
    let mut st = AdamState::for_params(&ps);
    let mut g = random_grads(&ps, &mut rng);
    g.add("b", &Tensor2::from_fn(1, 5, |_, c| if c == 2 { f64::NAN } else { 0.0 }));
    assert!(adam_step(&mut ps, &g, &mut st, &AdamConfig::default()).is_err());
    assert_eq!(st.t, 0);
    assert_eq!(ps, before);
}
