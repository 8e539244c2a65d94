use icci_model::array::Arr;
use icci_model::blocks::{feature_projection, ial_forward, res_dense_block, ssa_forward, trb_forward, BlockFlags};
use icci_model::layers::Ctx;
use icci_model::params::ParamStore;
use icci_model::tape::Var;
use icci_core::Rng;
use proptest::prelude::*;

fn random(shape: &[usize], seed: u64) -> Arr {
    let mut rng = Rng::new(seed);
    let n = shape.iter().product();
    Arr::new(shape.to_vec(), (0..n).map(|_| rng.next_gaussian()).collect())
}

/// Creates the block's parameters, lets `edit` rewrite them, then evaluates.
fn run_block(
    input: &Arr,
    build: impl Fn(&mut Ctx, Var) -> Var,
    edit: impl FnOnce(&mut ParamStore),
    train: bool,
) -> Arr {
    let mut store = ParamStore::new();
    {
        let mut ctx = Ctx::initializing(&mut store, 3);
        let x = ctx.constant(input.clone());
        build(&mut ctx, x);
    }
    edit(&mut store);
    let mut ctx = Ctx::new(&store, train, false);
    let x = ctx.constant(input.clone());
    let y = build(&mut ctx, x);
    ctx.tape.value(y).clone()
}

fn set_all(store: &mut ParamStore, filter: impl Fn(&str) -> bool, value: f32) {
    for (name, p) in store.iter_mut() {
        if filter(name) {
            p.data.iter_mut().for_each(|v| *v = value);
        }
    }
}

#[test]
fn projection_of_zero_is_zero() {
    let x = Arr::zeros(&[1, 1, 8, 8]);
    let y = run_block(&x, |c, x| feature_projection(c, "fp", x, 16).unwrap(), |_| {}, false);
    assert_eq!(y.shape, vec![1, 16, 8, 8]);
    assert!(y.data.iter().all(|&v| v == 0.0));
}

#[test]
fn projection_identity_kernel_copies_input() {
    let x = random(&[1, 1, 6, 7], 1);
    let y = run_block(
        &x,
        |c, x| feature_projection(c, "fp", x, 8).unwrap(),
        |s| {
            set_all(s, |_| true, 0.0);
            // k3 weight is [2, 1, 3, 3]; centre tap of output channel 0
            s.get_mut("fp.k3.w").unwrap().data[4] = 1.0;
        },
        false,
    );
    // branch order is k1, k3, k5, k7 with 2 channels each; k3 channel 0 is index 2
    let plane = &y.data[2 * 42..3 * 42];
    for (a, b) in plane.iter().zip(&x.data) {
        assert!((a - b).abs() < 1e-7);
    }
}

#[test]
fn projection_rejects_bad_width() {
    let mut store = ParamStore::new();
    let mut ctx = Ctx::initializing(&mut store, 0);
    let x = ctx.constant(Arr::zeros(&[1, 1, 4, 4]));
    assert!(feature_projection(&mut ctx, "fp", x, 6).is_err());
}

#[test]
fn trb_with_zero_convs_is_identity() {
    let x = random(&[2, 8, 5, 5], 2);
    for train in [false, true] {
        let y = run_block(
            &x,
            |c, x| trb_forward(c, "t", x, 8, BlockFlags::default()).unwrap(),
            |s| set_all(s, |n| n.ends_with(".w") || n.ends_with(".b"), 0.0),
            train,
        );
        assert_eq!(y, x);
    }
}

#[test]
fn trb_rejects_channel_mismatch() {
    let mut store = ParamStore::new();
    let mut ctx = Ctx::initializing(&mut store, 0);
    let x = ctx.constant(Arr::zeros(&[1, 4, 4, 4]));
    assert!(trb_forward(&mut ctx, "t", x, 8, BlockFlags::default()).is_err());
}

#[test]
fn saturated_attention_is_identity() {
    let x = random(&[2, 8, 6, 6], 4);
    let y = run_block(
        &x,
        |c, x| ssa_forward(c, "a", x).unwrap(),
        |s| {
            set_all(s, |n| n.ends_with(".w"), 0.0);
            set_all(s, |n| n == "a.fc1.b" || n == "a.spatial.b", 50.0);
        },
        false,
    );
    assert_eq!(y, x);
}

#[test]
fn attention_contracts_and_needs_four_channels() {
    let x = random(&[1, 4, 5, 5], 5);
    let y = run_block(&x, |c, x| ssa_forward(c, "a", x).unwrap(), |_| {}, false);
    assert_eq!(y.shape, x.shape);
    for (a, b) in y.data.iter().zip(&x.data) {
        assert!(a.abs() <= b.abs());
    }
    let mut store = ParamStore::new();
    let mut ctx = Ctx::initializing(&mut store, 0);
    let small = ctx.constant(Arr::zeros(&[1, 3, 4, 4]));
    assert!(ssa_forward(&mut ctx, "a", small).is_err());
}

#[test]
fn importance_layer_forced_weights() {
    let x = random(&[1, 2, 3, 3], 6);
    let neutral = run_block(
        &x,
        |c, x| ial_forward(c, "i", x),
        |s| {
            set_all(s, |n| n.ends_with(".w"), 0.0);
            set_all(s, |n| n.ends_with(".b"), 50.0);
        },
        false,
    );
    assert_eq!(neutral, x);
    let masked = run_block(
        &x,
        |c, x| ial_forward(c, "i", x),
        |s| {
            set_all(s, |n| n.ends_with(".w"), 0.0);
            s.get_mut("i.fc.b").unwrap().data.copy_from_slice(&[50.0, -50.0]);
        },
        false,
    );
    assert_eq!(masked.data[..9], x.data[..9]);
    assert!(masked.data[9..].iter().all(|v| v.abs() < 1e-20));
}

#[test]
fn dense_block_with_zero_fusion_is_identity() {
    let x = random(&[1, 8, 4, 4], 7);
    let y = run_block(
        &x,
        |c, x| res_dense_block(c, "r", x, 8, BlockFlags::default()).unwrap(),
        |s| set_all(s, |n| n.starts_with("r.fuse"), 0.0),
        true,
    );
    assert_eq!(y, x);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn blocks_preserve_shape(n in 1usize..3, c4 in 1usize..4, h in 2usize..7, w in 2usize..7) {
        let c = 4 * c4;
        let x = random(&[n, c, h, w], (n * 1000 + c * 100 + h * 10 + w) as u64);
        let t = run_block(&x, |ctx, x| trb_forward(ctx, "t", x, c, BlockFlags::default()).unwrap(), |_| {}, true);
        let s = run_block(&x, |ctx, x| ssa_forward(ctx, "s", x).unwrap(), |_| {}, false);
        let i = run_block(&x, |ctx, x| ial_forward(ctx, "i", x), |_| {}, false);
        let p = run_block(&x, |ctx, x| feature_projection(ctx, "p", x, c).unwrap(), |_| {}, false);
        prop_assert_eq!(&t.shape, &x.shape);
        prop_assert_eq!(&s.shape, &x.shape);
        prop_assert_eq!(&i.shape, &x.shape);
        prop_assert_eq!(p.shape[1], c);
    }
}
