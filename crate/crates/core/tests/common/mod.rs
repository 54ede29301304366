//! Fixtures and independent oracles shared by integration and acceptance
//! tests. The forward oracle uses plain scalar loops and never calls the
//! library's matrix or layer code.

#![allow(dead_code)]

use hierloc::dataset::{CoordinateBounds, DatasetLayout, DatasetMeta};
use hierloc::model::{ForwardTape, GradScope, HierLocModel, HierLocNet, HyperParams, OutputGrads};
use hierloc::nn::{
    gradient_check, mse_grad, mse_loss, Activation, CellKind, CellState, DenseLayer, Layer, Mode, Params, RnnCell, Sequential,
    StepCache,
};
use hierloc::{Matrix, SeededRng};

pub fn toy_layout() -> DatasetLayout {
    DatasetLayout {
        ap_count: 4,
        building_count: 3,
        floor_count: 5,
    }
}

pub fn toy_meta() -> DatasetMeta {
    DatasetMeta::new(
        toy_layout(),
        CoordinateBounds {
            min_x: -10.0,
            max_x: 30.0,
            min_y: 0.0,
            max_y: 20.0,
        },
    )
    .unwrap()
}

/// Feature width 4, every hidden width 2.
pub fn toy_params(kind: CellKind) -> HyperParams {
    let mut p = HyperParams::default();
    for (k, v) in [
        ("sae_layers", "2"),
        ("common_layers", "2"),
        ("rnn_hidden", "2"),
        ("rnn_layers", "2"),
        ("bf_head_layers", "2,1"),
        ("position_layers", "2,2"),
    ] {
        p.set(k, v).unwrap();
    }
    p.rnn_kind = kind;
    p
}

/// Toy model whose every parameter is set by a fixed formula of its global
/// index, so the weights are known without relying on any initialiser.
pub fn hand_weighted_model(kind: CellKind) -> HierLocModel {
    let mut m = HierLocModel::new(toy_params(kind), toy_meta()).unwrap();
    let mut k = 0usize;
    for (_, t) in m.net.params_mut() {
        for v in t.data_mut() {
            *v = 0.9 * (1.37 * k as f64 + 0.41).sin();
            k += 1;
        }
    }
    m
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Linear => x,
    }
}

fn dense(x: &[f64], d: &DenseLayer) -> Vec<f64> {
    let w: &Matrix = &d.weights;
    (0..w.cols())
        .map(|j| {
            let mut s = d.bias.get(0, j);
            for (i, xi) in x.iter().enumerate() {
                s += xi * w.get(i, j);
            }
            act(d.activation, s)
        })
        .collect()
}

/// Evaluation-mode pass: dropout layers are the identity.
fn stack(x: &[f64], s: &Sequential) -> Vec<f64> {
    let mut v = x.to_vec();
    for l in &s.layers {
        if let Layer::Dense(d) = l {
            v = dense(&v, d);
        }
    }
    v
}

fn cell(x: &[f64], h: &[f64], c: &[f64], cell: &RnnCell) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let gates = cell.bias.cols();
    let pre: Vec<f64> = (0..gates)
        .map(|j| {
            let mut s = cell.bias.get(0, j);
            for (i, xi) in x.iter().enumerate() {
                s += xi * cell.input_weights.get(i, j);
            }
            for (i, hi) in h.iter().enumerate() {
                s += hi * cell.recurrent_weights.get(i, j);
            }
            s
        })
        .collect();
    match cell.kind {
        CellKind::Standard => (pre.iter().map(|&v| v.max(0.0)).collect(), vec![0.0; n]),
        CellKind::Lstm => {
            let mut h2 = vec![0.0; n];
            let mut c2 = vec![0.0; n];
            for j in 0..n {
                let i = sigmoid(pre[j]);
                let f = sigmoid(pre[n + j]);
                let g = pre[2 * n + j].tanh();
                let o = sigmoid(pre[3 * n + j]);
                c2[j] = f * c[j] + i * g;
                h2[j] = o * c2[j].tanh();
            }
            (h2, c2)
        }
    }
}

/// One fingerprint through the whole network, step by step.
/// Returns `(building, floor, x_scaled, y_scaled)`.
pub fn oracle_forward(net: &HierLocNet, x: &[f64]) -> (f64, f64, f64, f64) {
    let z = stack(&stack(x, &net.encoder), &net.common);
    let hidden = net.cells[0].hidden();
    let mut hs = vec![vec![0.0; hidden]; net.cells.len()];
    let mut cs = hs.clone();
    let mut run = |fed: f64| -> Vec<f64> {
        let mut input: Vec<f64> = z.iter().copied().chain([fed]).collect();
        for (l, c) in net.cells.iter().enumerate() {
            let (h, cc) = cell(&input, &hs[l], &cs[l], c);
            hs[l] = h.clone();
            cs[l] = cc;
            input = h;
        }
        input
    };
    let b = stack(&run(0.0), &net.building_head)[0];
    let f = stack(&run(b), &net.floor_head)[0];
    let pin: Vec<f64> = z.iter().copied().chain([b, f]).collect();
    let xy = stack(&pin, &net.position_head);
    (b, f, xy[0], xy[1])
}

/// Reference early-stopping rule: stop iff enough epochs ran and the best
/// of the last `patience` losses is not strictly below the best before them.
pub fn reference_should_stop(losses: &[f64], patience: usize, min_epochs: usize) -> bool {
    let n = losses.len();
    if n < min_epochs || n <= patience {
        return false;
    }
    let before = losses[..n - patience].iter().cloned().fold(f64::INFINITY, f64::min);
    let window = losses[n - patience..].iter().cloned().fold(f64::INFINITY, f64::min);
    !(window < before)
}

pub fn random_inputs(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
    let data = (0..rows * cols).map(|_| rng.next_f64()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn uniform_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Maximum relative gradient error of a 5→4 dense layer under MSE.
pub fn grad_dense(act: Activation) -> f64 {
    let mut rng = SeededRng::new(17);
    let layer = DenseLayer::new(5, 4, act, &mut rng).unwrap();
    let x = uniform_matrix(&mut rng, 3, 5);
    let t = uniform_matrix(&mut rng, 3, 4);
    let (y, cache) = layer.forward_cached(&x).unwrap();
    let (grads, _) = layer.backward(&cache, &mse_grad(&y, &t).unwrap(), false).unwrap();
    gradient_check(&layer, &grads, |l| mse_loss(&l.forward(&x)?, &t))
        .unwrap()
        .max_relative_error
}

/// Two stacked cells unrolled for two steps; the loss is the MSE of the top
/// output at both steps.
#[derive(Clone)]
struct Unroll {
    cells: Vec<RnnCell>,
}

impl Params for Unroll {
    fn params(&self) -> Vec<(String, &Matrix)> {
        let mut v = Vec::new();
        for (i, c) in self.cells.iter().enumerate() {
            v.extend(c.params().into_iter().map(|(n, m)| (format!("{i}.{n}"), m)));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut v = Vec::new();
        for (i, c) in self.cells.iter_mut().enumerate() {
            v.extend(c.params_mut().into_iter().map(|(n, m)| (format!("{i}.{n}"), m)));
        }
        v
    }
}

fn unroll(net: &Unroll, xs: &[Matrix; 2], ts: &[Matrix; 2]) -> (f64, Unroll) {
    let layers = net.cells.len();
    let mut states: Vec<CellState> = net.cells.iter().map(|c| CellState::zeros(xs[0].rows(), c.hidden())).collect();
    let mut caches: Vec<Vec<StepCache>> = vec![Vec::new(); 2];
    let mut outs = Vec::new();
    for (t, x) in xs.iter().enumerate() {
        let mut input = x.clone();
        for l in 0..layers {
            let (next, cache) = net.cells[l].step(&input, &states[l]).unwrap();
            caches[t].push(cache);
            input = next.h.clone();
            states[l] = next;
        }
        outs.push(input);
    }
    let loss = mse_loss(&outs[0], &ts[0]).unwrap() + mse_loss(&outs[1], &ts[1]).unwrap();
    let mut grads = Unroll {
        cells: net.cells.iter().map(RnnCell::zeros_like).collect(),
    };
    let mut carry_h: Vec<Option<Matrix>> = vec![None; layers];
    let mut carry_c: Vec<Option<Matrix>> = vec![None; layers];
    for t in (0..2).rev() {
        let mut d_above = mse_grad(&outs[t], &ts[t]).unwrap();
        for l in (0..layers).rev() {
            if let Some(c) = &carry_h[l] {
                d_above.add_in_place(c).unwrap();
            }
            let g = net.cells[l].backward_step(&caches[t][l], &d_above, carry_c[l].as_ref()).unwrap();
            grads.cells[l].accumulate(&g.params).unwrap();
            carry_h[l] = Some(g.dh_prev);
            carry_c[l] = Some(g.dc_prev);
            d_above = g.dx;
        }
    }
    (loss, grads)
}

/// Maximum relative gradient error of a 3→4→4 two-step unroll.
pub fn grad_unroll(kind: CellKind, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let mut net = Unroll {
        cells: vec![
            RnnCell::new(kind, 3, 4, &mut rng).unwrap(),
            RnnCell::new(kind, 4, 4, &mut rng).unwrap(),
        ],
    };
    // Nonzero biases keep relu pre-activations away from the kink at 0.
    for cell in &mut net.cells {
        cell.bias.data_mut().iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
    }
    let xs = [uniform_matrix(&mut rng, 2, 3), uniform_matrix(&mut rng, 2, 3)];
    let ts = [uniform_matrix(&mut rng, 2, 4), uniform_matrix(&mut rng, 2, 4)];
    let (_, grads) = unroll(&net, &xs, &ts);
    gradient_check(&net, &grads, |n| Ok(unroll(n, &xs, &ts).0))
        .unwrap()
        .max_relative_error
}

fn full_loss(net: &HierLocNet, x: &Matrix, t: &(Matrix, Matrix, Matrix)) -> hierloc::Result<f64> {
    let out = net.forward(x, Mode::Eval, &mut SeededRng::new(0), true, &mut ForwardTape::new())?;
    Ok(mse_loss(&out.building, &t.0)? + mse_loss(&out.floor, &t.1)? + mse_loss(out.xy.as_ref().unwrap(), &t.2)?)
}

/// Maximum relative gradient error over every parameter of the toy model,
/// with losses on all four outputs.
pub fn grad_full_model(kind: CellKind) -> f64 {
    let m = HierLocModel::new(
        HyperParams {
            seed: 5,
            ..toy_params(kind)
        },
        toy_meta(),
    )
    .unwrap();
    let mut net = m.net.clone();
    // Nonzero biases keep relu pre-activations away from the kink at 0.
    let mut rng = SeededRng::new(12);
    for (_, t) in net.params_mut() {
        if t.rows() == 1 {
            t.data_mut().iter_mut().for_each(|v| *v += rng.uniform(-0.3, 0.3));
        }
    }
    let x = random_inputs(3, 4, 13);
    let targets = (
        Matrix::column_vector(&[0.0, 1.0, 2.0]),
        Matrix::column_vector(&[4.0, 0.0, 2.0]),
        random_inputs(3, 2, 14),
    );
    let mut tape = ForwardTape::new();
    let out = net.forward(&x, Mode::Eval, &mut SeededRng::new(0), true, &mut tape).unwrap();
    let grads = OutputGrads {
        building: Some(mse_grad(&out.building, &targets.0).unwrap()),
        floor: Some(mse_grad(&out.floor, &targets.1).unwrap()),
        xy: Some(mse_grad(out.xy.as_ref().unwrap(), &targets.2).unwrap()),
    };
    let analytic = net.backward(&tape, &grads, GradScope::All).unwrap();
    let report = gradient_check(&net, &analytic, |n| full_loss(n, &x, &targets)).unwrap();
    assert_eq!(report.entries_checked, net.param_count());
    report.max_relative_error
}
