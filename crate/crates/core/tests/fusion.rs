use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roadrisk::gnn::{FusionConfig, FusionHead, FusionMode};
use roadrisk::nn::{ParamStore, Tape, Tensor};

fn tensor(rows: usize, cols: usize, v: &[f64]) -> Tensor {
    Tensor::from_vec(rows, cols, v[..rows * cols].to_vec()).unwrap()
}

fn head(mode: FusionMode, experts: usize, d_x: usize, d_z: usize, seed: u64) -> (ParamStore, FusionHead) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = FusionConfig { mode, experts, gate_hidden: 6 };
    let h = FusionHead::new(&mut store, &cfg, d_x, d_z, 8, &mut rng).unwrap();
    (store, h)
}

const N: usize = 6;
const DX: usize = 4;
const DZ: usize = 3;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn moe_gate_rows_sum_to_one(
        x in prop::collection::vec(-3.0f64..3.0, N * DX),
        z in prop::collection::vec(-3.0f64..3.0, N * DZ),
        k in 1usize..6,
        seed in 0u64..1000,
    ) {
        let (store, h) = head(FusionMode::Moe, k, DX, DZ, seed);
        let mut t = Tape::new();
        let (xv, zv) = (t.input(tensor(N, DX, &x)).unwrap(), t.input(tensor(N, DZ, &z)).unwrap());
        let (_, gate) = h.forward(&mut t, &store, xv, zv).unwrap();
        let g = t.value(gate.unwrap());
        prop_assert_eq!(g.shape(), (N, k));
        for r in 0..N {
            let s: f64 = g.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12, "row {} sums to {}", r, s);
            prop_assert!(g.row(r).iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn moe_single_expert_is_that_expert(
        x in prop::collection::vec(-3.0f64..3.0, N * DX),
        z in prop::collection::vec(-3.0f64..3.0, N * DZ),
        seed in 0u64..1000,
    ) {
        let (store, h) = head(FusionMode::Moe, 1, DX, DZ, seed);
        let FusionHead::Moe { experts, .. } = &h else { unreachable!() };
        let mut t = Tape::new();
        let (xv, zv) = (t.input(tensor(N, DX, &x)).unwrap(), t.input(tensor(N, DZ, &z)).unwrap());
        let (out, gate) = h.forward(&mut t, &store, xv, zv).unwrap();
        prop_assert!(t.value(gate.unwrap()).data().iter().all(|&w| w == 1.0));
        let xz = t.concat_cols(xv, zv).unwrap();
        let e = experts[0].forward(&mut t, &store, xz).unwrap();
        prop_assert_eq!(t.value(out), t.value(e));
    }

    #[test]
    fn gated_is_convex_combination(
        x in prop::collection::vec(-3.0f64..3.0, N * DX),
        z in prop::collection::vec(-3.0f64..3.0, N * DZ),
        seed in 0u64..1000,
    ) {
        let (store, h) = head(FusionMode::Gated, 0, DX, DZ, seed);
        let FusionHead::Gated { proj, .. } = &h else { unreachable!() };
        let mut t = Tape::new();
        let (xv, zv) = (t.input(tensor(N, DX, &x)).unwrap(), t.input(tensor(N, DZ, &z)).unwrap());
        let (out, gate) = h.forward(&mut t, &store, xv, zv).unwrap();
        let zp = proj.forward(&mut t, &store, zv).unwrap();
        let (lam, out, zp) = (t.value(gate.unwrap()).clone(), t.value(out).clone(), t.value(zp).clone());
        prop_assert_eq!(lam.shape(), (N, 1));
        for r in 0..N {
            let l = lam.get(r, 0);
            prop_assert!(l > 0.0 && l < 1.0);
            for c in 0..DX {
                let xi = x[r * DX + c];
                let want = l * xi + (1.0 - l) * zp.get(r, c);
                let scale = xi.abs().max(zp.get(r, c).abs()).max(1.0);
                prop_assert!((out.get(r, c) - want).abs() <= 1e-12 * scale);
                // inside the segment between x and z'
                let (lo, hi) = (xi.min(zp.get(r, c)), xi.max(zp.get(r, c)));
                prop_assert!(out.get(r, c) >= lo - 1e-12 * scale && out.get(r, c) <= hi + 1e-12 * scale);
            }
        }
    }
}

#[test]
fn none_head_is_identity() {
    let (store, h) = head(FusionMode::None, 0, DX, DZ, 0);
    let mut t = Tape::new();
    let x = t.input(Tensor::filled(N, DX, 0.5)).unwrap();
    let z = t.input(Tensor::filled(N, DZ, 2.0)).unwrap();
    let (out, gate) = h.forward(&mut t, &store, x, z).unwrap();
    assert!(gate.is_none());
    assert_eq!(t.value(out), t.value(x));
}
