use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxfuse::net::gradcheck::{check_gradients, GradTolerance};
use voxfuse::net::kernels::{offset_index, Rulebook};
use voxfuse::net::{Graph, ParamStore, Tensor};

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Dense reference: zero-filled 3D grid, full 27-tap correlation, read back at
/// active sites only.
fn dense_subm_oracle(
    coords: &[[usize; 3]],
    dims: [usize; 3],
    x: &[f64],
    cin: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut grid = vec![0.0; nx * ny * nz * cin];
    for (i, c) in coords.iter().enumerate() {
        let o = ((c[0] * ny + c[1]) * nz + c[2]) * cin;
        grid[o..o + cin].copy_from_slice(&x[i * cin..(i + 1) * cin]);
    }
    let mut out = Vec::new();
    for c in coords {
        let mut acc = b.to_vec();
        for dx in -1isize..=1 {
            for dy in -1isize..=1 {
                for dz in -1isize..=1 {
                    let p = [c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz];
                    if p[0] < 0 || p[1] < 0 || p[2] < 0 || p[0] >= nx as isize || p[1] >= ny as isize || p[2] >= nz as isize {
                        continue;
                    }
                    let o = ((p[0] as usize * ny + p[1] as usize) * nz + p[2] as usize) * cin;
                    let tap = offset_index([dx, dy, dz]);
                    for ci in 0..cin {
                        for co in 0..cout {
                            acc[co] += grid[o + ci] * w[(tap * cin + ci) * cout + co];
                        }
                    }
                }
            }
        }
        out.extend(acc);
    }
    out
}

fn random_occupancy(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<[usize; 3]> {
    let mut coords = Vec::new();
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                if rng.gen_bool(p) {
                    coords.push([x, y, z]);
                }
            }
        }
    }
    coords
}

#[test]
fn subm_conv_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..25 {
        let coords = random_occupancy(&mut rng, 4, 0.35);
        let (cin, cout) = (3, 2);
        let x = randn(&mut rng, coords.len() * cin);
        let w = randn(&mut rng, 27 * cin * cout);
        let b = randn(&mut rng, cout);
        let mut g = Graph::new();
        let xv = g.constant(vec![coords.len(), cin], x.clone()).unwrap();
        let wv = g.constant(vec![27, cin, cout], w.clone()).unwrap();
        let bv = g.constant(vec![cout], b.clone()).unwrap();
        let y = g.subm_conv3d(xv, wv, bv, Rc::new(Rulebook::build(&coords))).unwrap();
        let oracle = dense_subm_oracle(&coords, [4, 4, 4], &x, cin, &w, &b, cout);
        assert_eq!(g.shape(y), &[coords.len(), cout]);
        for (a, o) in g.value(y).iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-9);
        }
    }
}

#[test]
fn subm_conv_identity_and_empty() {
    let mut g = Graph::new();
    let x = g.constant(vec![1, 2], vec![0.7, -0.3]).unwrap();
    let mut w = vec![0.0; 27 * 4];
    let c = offset_index([0, 0, 0]);
    w[c * 4] = 1.0;
    w[c * 4 + 3] = 1.0;
    let wv = g.constant(vec![27, 2, 2], w).unwrap();
    let bv = g.constant(vec![2], vec![0.0, 0.0]).unwrap();
    let y = g.subm_conv3d(x, wv, bv, Rc::new(Rulebook::build(&[[5, 5, 5]]))).unwrap();
    assert_eq!(g.value(y), &[0.7, -0.3]);

    let e = g.constant(vec![0, 2], vec![]).unwrap();
    let y = g.subm_conv3d(e, wv, bv, Rc::new(Rulebook::build(&[]))).unwrap();
    assert_eq!(g.shape(y), &[0, 2]);
}

fn naive_conv2d(
    x: &[f64],
    (h, w, cin): (usize, usize, usize),
    k: &[f64],
    ks: usize,
    cout: usize,
    b: &[f64],
    stride: usize,
    pad: usize,
    dil: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - dil * (ks - 1) - 1) / stride + 1;
    let ow = (w + 2 * pad - dil * (ks - 1) - 1) / stride + 1;
    let mut out = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = b[co];
                for ky in 0..ks {
                    for kx in 0..ks {
                        let iy = (oy * stride + ky * dil) as isize - pad as isize;
                        let ix = (ox * stride + kx * dil) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            acc += x[(iy as usize * w + ix as usize) * cin + ci]
                                * k[((ky * ks + kx) * cin + ci) * cout + co];
                        }
                    }
                }
                out[(oy * ow + ox) * cout + co] = acc;
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(stride, pad, dil, ks) in &[(1, 1, 1, 3), (1, 0, 1, 3), (2, 1, 1, 3), (1, 2, 2, 3), (1, 0, 1, 1), (2, 2, 1, 5)] {
        let (h, w, cin, cout) = (5, 5, 3, 2);
        let x = randn(&mut rng, h * w * cin);
        let k = randn(&mut rng, ks * ks * cin * cout);
        let b = randn(&mut rng, cout);
        let (expect, oh, ow) = naive_conv2d(&x, (h, w, cin), &k, ks, cout, &b, stride, pad, dil);
        let mut g = Graph::new();
        let xv = g.constant(vec![h, w, cin], x).unwrap();
        let kv = g.constant(vec![ks, ks, cin, cout], k).unwrap();
        let bv = g.constant(vec![cout], b).unwrap();
        let y = g.conv2d(xv, kv, bv, stride, pad, dil).unwrap();
        assert_eq!(g.shape(y), &[oh, ow, cout]);
        for (a, e) in g.value(y).iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_identity_and_impulse() {
    let mut g = Graph::new();
    let x = g.constant(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
    let eye = g.constant(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let zero = g.constant(vec![2], vec![0.0, 0.0]).unwrap();
    let y = g.conv2d(x, eye, zero, 1, 0, 1).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let mut img = vec![0.0; 25];
    img[12] = 1.0;
    let imp = g.constant(vec![5, 5, 1], img).unwrap();
    let ones = g.constant(vec![3, 3, 1, 1], vec![1.0; 9]).unwrap();
    let b = g.constant(vec![1], vec![0.0]).unwrap();
    let y = g.conv2d(imp, ones, b, 1, 1, 1).unwrap();
    let v = g.value(y);
    for r in 0..5 {
        for c in 0..5 {
            let inside = (1..=3).contains(&r) && (1..=3).contains(&c);
            assert_eq!(v[r * 5 + c], if inside { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn vfe_pooling_examples() {
    // identity-like 2x2 weights on two points: pooled = elementwise max of relu(x)
    let mut g = Graph::new();
    let x = g.constant(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    let w = g.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let b = g.constant(vec![2], vec![0.0, 0.0]).unwrap();
    let h = g.linear(x, w, b).unwrap();
    let h = g.relu(h);
    let m = g.segment_max(h, &[0, 2]).unwrap();
    assert_eq!(g.value(m), &[1.0, 3.0]);
    let single = g.segment_max(h, &[0, 1, 2]).unwrap();
    assert_eq!(g.value(single), &[1.0, 0.0, 0.5, 3.0]);
    assert!(g.segment_max(h, &[0, 0, 2]).is_err());
}

fn tol() -> GradTolerance {
    GradTolerance::default()
}

#[test]
fn gradcheck_linear_relu_segment_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut store = ParamStore::new();
    store.insert("x", Tensor::new(vec![5, 3], randn(&mut rng, 15)).unwrap()).unwrap();
    store.insert("w", Tensor::new(vec![3, 4], randn(&mut rng, 12)).unwrap()).unwrap();
    store.insert("b", Tensor::new(vec![4], randn(&mut rng, 4)).unwrap()).unwrap();
    store.insert("c", Tensor::new(vec![2, 8], randn(&mut rng, 16)).unwrap()).unwrap();
    let seg = Rc::new(vec![0u32, 0, 0, 1, 1]);
    let report = check_gradients(
        &mut store,
        |g, s| {
            let x = g.param_named(s, "x")?;
            let w = g.param_named(s, "w")?;
            let b = g.param_named(s, "b")?;
            let c = g.param_named(s, "c")?;
            let h = g.linear(x, w, b)?;
            let h = g.relu(h);
            let p = g.segment_max(h, &[0, 3, 5])?;
            let cat = g.concat_pooled(h, p, seg.clone())?;
            let m = g.segment_max(cat, &[0, 3, 5])?;
            let prod = g.mul(m, c)?;
            Ok(g.sum(prod))
        },
        tol(),
        1,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.mismatches);
}

#[test]
fn gradcheck_sparse_and_dense_convs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let coords = random_occupancy(&mut rng, 4, 0.4);
    let rules = Rc::new(Rulebook::build(&coords));
    let n = coords.len();
    let mut store = ParamStore::new();
    store.insert("x", Tensor::new(vec![n, 2], randn(&mut rng, n * 2)).unwrap()).unwrap();
    store.insert("w3", Tensor::new(vec![27, 2, 3], randn(&mut rng, 162)).unwrap()).unwrap();
    store.insert("b3", Tensor::new(vec![3], randn(&mut rng, 3)).unwrap()).unwrap();
    store.insert("w2", Tensor::new(vec![3, 3, 12, 2], randn(&mut rng, 216)).unwrap()).unwrap();
    store.insert("b2", Tensor::new(vec![2], randn(&mut rng, 2)).unwrap()).unwrap();
    store.insert("c", Tensor::new(vec![4, 4, 2], randn(&mut rng, 32)).unwrap()).unwrap();
    let report = check_gradients(
        &mut store,
        |g, s| {
            let x = g.param_named(s, "x")?;
            let w3 = g.param_named(s, "w3")?;
            let b3 = g.param_named(s, "b3")?;
            let h = g.subm_conv3d(x, w3, b3, rules.clone())?;
            let h = g.relu(h);
            let bev = g.scatter_bev(h, &coords, [4, 4, 4])?;
            let w2 = g.param_named(s, "w2")?;
            let b2 = g.param_named(s, "b2")?;
            let y = g.conv2d(bev, w2, b2, 1, 2, 2)?;
            let c = g.param_named(s, "c")?;
            let p = g.mul(y, c)?;
            Ok(g.sum(p))
        },
        tol(),
        1,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.mismatches);
    assert_eq!(report.checked, store.num_scalars());
}

mod composed {
    use super::*;
    use voxfuse::fusionio::{FusedPoint, LidarPoint};
    use voxfuse::geom::BBox3D;
    use voxfuse::losses::{loss_node, LossWeights};
    use voxfuse::net::{Detector, NetConfig, TrunkLayer};
    use voxfuse::targets::{generate_anchors, match_anchors, AnchorConfig, MatchConfig, YawMode};
    use voxfuse::voxel::{voxelize, FeatureMask, GridConfig, VoxelInput};

    #[test]
    fn gradcheck_detector_through_loss() {
        let grid = GridConfig {
            x_range: [0.0, 1.2],
            y_range: [-0.6, 0.6],
            z_range: [-0.8, 0.8],
            voxel_xy: 0.3,
            voxel_z: 0.4,
            ..GridConfig::default()
        };
        let net = NetConfig {
            vfe_widths: vec![4],
            voxel_channels: 3,
            sparse_channels: vec![3],
            trunk: vec![TrunkLayer { kernel: 3, channels: 3, dilation: 1 }],
            cls_prior: 0.2,
        };
        let det = Detector::new(net, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<FusedPoint> = (0..25)
            .map(|_| {
                FusedPoint::from_lidar(&LidarPoint {
                    x: rng.gen_range(0.0..1.2),
                    y: rng.gen_range(-0.6..0.6),
                    z: rng.gen_range(-0.8..0.8),
                    i: rng.gen_range(0.0..1.0),
                })
            })
            .collect();
        let input = VoxelInput::from_voxels(&voxelize(&pts, &grid), &grid, &FeatureMask::default());
        let anchors = generate_anchors(&grid, &AnchorConfig { dims: [0.5, 0.9, 0.6], z: 0.0 });
        let gt = BBox3D { x: 0.6, y: 0.1, z: 0.1, w: 0.45, l: 0.8, h: 0.5, yaw: 2.0 };
        let tgt = match_anchors(&anchors, &grid, &[gt], &MatchConfig::default(), YawMode::SinBin).unwrap();
        assert!(tgt.num_positive() > 0);
        let mut store = det.init_params(4);
        // zero-initialised biases put dead-input pre-activations exactly on a ReLU kink
        for (name, t) in store.iter_mut() {
            if name.ends_with(".b") {
                for v in &mut t.data {
                    *v += rng.gen_range(-0.1..0.1);
                }
            }
        }
        let w = LossWeights::default();
        let report = check_gradients(
            &mut store,
            |g, s| {
                let heads = det.forward(g, s, &input)?;
                Ok(loss_node(g, &heads, &tgt, &w)?.0)
            },
            tol(),
            1,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.mismatches);
    }
}
