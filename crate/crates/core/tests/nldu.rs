use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use latte::code_model::{build_stability_model, Basis, Channel, NoiseParams};
use latte::nldu::{
    classify, estimate_resources, export_dataset, gather_inputs, halo_cells, infer_batch, post_process, predecode,
    read_dataset, run_boards, search_config, shot_labels, stage_latency_s, BoardTiling, Compressed, Geometry, NlduConfig,
    NlduError, NlduPredecoder, QuantizedModel, Sample, StreamInference, Volume, PIPELINE_DELAY_S,
};
use latte::sampler::{shot_seed, ShotSampler};
use latte::scheduler::RoundPredecoder;

mod common;
use common::*;

#[test]
fn silent_rounds_embed_to_boundary_only() {
    let m = memory(5, 4, 0.001);
    let g = Geometry::new(&m);
    let v = g.embed(&[], 0, 4).unwrap();
    assert_eq!((v.nt, v.nx, v.ny, v.nc), (4, 6, 6, 2));
    assert!(v.data.iter().all(|&c| c == 0 || c == 2));
    let twos = v.data.iter().filter(|&&c| c == 2).count();
    assert_eq!(twos, 4 * g.boundary.len());
    assert!(!g.boundary.is_empty());
    for &(x, y, c) in &g.boundary {
        assert!(g.detector_at(x as usize, y as usize, c as usize).is_none());
    }
}

#[test]
fn single_detector_lands_on_its_cell() {
    let m = memory(5, 3, 0.001);
    let g = Geometry::new(&m);
    let pos = m.layer_stabs[7].0;
    let basis = m.layer_stabs[7].1;
    let v = g.embed(&[m.detector_id(1, 7)], 0, 3).unwrap();
    let ones: Vec<_> = (0..v.data.len()).filter(|&i| v.data[i] == 1).collect();
    assert_eq!(ones, vec![v.index(1, pos.0, pos.1, basis.index())]);
    assert!(matches!(
        g.embed_cells(3, &[(0, 9, 9, Basis::Z)]),
        Err(NlduError::Coordinate(_))
    ));
}

#[test]
fn embed_and_extract_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for m in [memory(5, 6, 0.001), build_stability_model(4, 6, NoiseParams::uniform(0.001)).unwrap()] {
        let g = Geometry::new(&m);
        for _ in 0..500 {
            let t = rng.gen_range(0..6);
            let mut locals: Vec<u32> = (0..g.layer_size() as u32).filter(|_| rng.gen_bool(0.1)).collect();
            locals.sort_unstable();
            let slice = g.embed_round(&locals).unwrap();
            assert_eq!(g.extract_round(&slice), locals);
            let global: Vec<u32> = locals.iter().map(|&l| m.detector_id(t, l as usize)).collect();
            assert_eq!(g.extract(&g.embed(&global, 0, 6).unwrap(), 0), global);
        }
    }
}

#[test]
fn zero_weights_give_zero_logits() {
    let m = memory(5, 5, 0.01);
    let g = Geometry::new(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = random_input(&g, 5, 0.2, &mut rng);
    let out = infer_batch(&QuantizedModel::zeros(), &v).unwrap();
    assert!(out.data.iter().all(|&c| c == 0));
    let c = classify(&out, &g, QuantizedModel::zeros().threshold(), 0);
    assert_eq!(c.accepted(), 0);
}

#[test]
fn batch_inference_matches_the_direct_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Geometry::new(&memory(5, 6, 0.01));
    for _ in 0..5 {
        let model = random_model(&mut rng);
        let input = random_input(&g, 6, 0.15, &mut rng);
        let want = oracle(&model, &input);
        assert_eq!(infer_batch(&model, &input).unwrap(), want);
        // non-trivial: not saturated to a constant
        let distinct: std::collections::BTreeSet<u8> = want.data.iter().copied().collect();
        assert!(distinct.len() > 10);
    }
}

#[test]
fn streaming_matches_batch_on_d9_volumes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = Geometry::new(&memory(9, 20, 0.01));
    let models: Vec<QuantizedModel> = (0..4).map(|_| random_model(&mut rng)).collect();
    for i in 0..100 {
        let model = &models[i % models.len()];
        let input = random_input(&g, 20, rng.gen_range(0.005..0.1), &mut rng);
        let want = infer_batch(model, &input).unwrap();
        assert_eq!(StreamInference::run(model, &input).unwrap(), want, "volume {i}");
    }
}

#[test]
fn stream_emits_with_fixed_delay_and_flushes_without_idle_rounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = Geometry::new(&memory(5, 12, 0.01));
    let model = random_model(&mut rng);
    let input = random_input(&g, 12, 0.1, &mut rng);
    let mut s = StreamInference::new(&model, g.nx, g.ny).unwrap();
    assert_eq!(s.delay(), 3);
    let mut seen = Vec::new();
    for t in 0..12 {
        for (r, _) in s.push(input.slice(t).to_vec()).unwrap() {
            assert_eq!(r + 3, t);
            seen.push(r);
        }
    }
    let tail: Vec<usize> = s.finish().into_iter().map(|(r, _)| r).collect();
    assert_eq!(tail, vec![9, 10, 11]);
    seen.extend(tail);
    assert_eq!(seen, (0..12).collect::<Vec<_>>());
    assert!(s.push(vec![0; 3]).is_err());
}

#[test]
fn receptive_field_is_local() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = Geometry::new(&memory(9, 12, 0.01));
    let model = random_model(&mut rng);
    for _ in 0..5 {
        let input = random_input(&g, 12, 0.05, &mut rng);
        let base = infer_batch(&model, &input).unwrap();
        let (t, x, y, c) = (rng.gen_range(0..12), rng.gen_range(0..10), rng.gen_range(0..10), rng.gen_range(0..2));
        let mut poked = input.clone();
        poked.set(t, x, y, c, if input.get(t, x, y, c) == 1 { 0 } else { 1 });
        let out = infer_batch(&model, &poked).unwrap();
        let mut changed = 0;
        for tt in 0..12 {
            for xx in 0..10 {
                for yy in 0..10 {
                    for k in 0..6 {
                        if out.get(tt, xx, yy, k) != base.get(tt, xx, yy, k) {
                            changed += 1;
                            let cheb = tt.abs_diff(t).max(xx.abs_diff(x)).max(yy.abs_diff(y));
                            assert!(cheb <= 3, "change at distance {cheb}");
                        }
                    }
                }
            }
        }
        assert!(changed > 0);
    }
}

#[test]
fn classify_follows_argmax_and_strict_threshold() {
    let m = memory(5, 3, 0.01);
    let g = Geometry::new(&m);
    let mut model = QuantizedModel::zeros();
    model.layers[3].act_scale = 0.05;
    model.layers[3].act_zp = 100;
    let theta = model.threshold();
    assert_eq!(theta, (4f64.ln() / 0.05f32 as f64).round() as i32 + 100);
    assert_eq!(theta, 128);

    // qubit (2, 2) at t = 1 has every Pauli anchor; (2, 2) is also a
    // stabilizer cell with M and H anchors
    let mut pred = Volume::new(3, 6, 6, 6);
    let set = |p: &mut Volume, v: [u8; 6]| {
        for (c, &x) in v.iter().enumerate() {
            p.set(1, 2, 2, c, x);
        }
    };
    set(&mut pred, [10, 5, 40, 39, 128, 129]);
    let c = classify(&pred, &g, theta, 0);
    assert!(g.edge_at(1, 2, 2, Channel::Y).is_some() && g.edge_at(1, 2, 2, Channel::H).is_some());
    // Y and H: E = [1, 1, 0, 1]
    assert_eq!(c.bits(1, 2, 2), [true, true, false, true]);
    assert_eq!(c.accepted(), 2);
    // ties go to the lowest index
    set(&mut pred, [7, 7, 7, 7, 0, 0]);
    assert_eq!(classify(&pred, &g, theta, 0).accepted(), 0);
    set(&mut pred, [7, 9, 9, 9, 0, 0]);
    assert_eq!(classify(&pred, &g, theta, 0).pauli(1, 2, 2), 1);
    // anchors without an edge are ignored
    let mut corner = Volume::new(3, 6, 6, 6);
    corner.set(0, 0, 0, 4, 255);
    assert!(g.edge_at(0, 0, 0, Channel::M).is_none());
    assert_eq!(classify(&corner, &g, theta, 0).accepted(), 0);
}

#[test]
fn shipped_threshold_matches_its_quantization() {
    let m = QuantizedModel::shipped();
    assert!(m.has_reference_shape());
    assert_eq!(m.params(), 3093);
    let last = m.layers.last().unwrap();
    assert_eq!(m.threshold(), (4f64.ln() / last.act_scale as f64).round() as i32 + last.act_zp);
}


#[test]
fn post_processing_matches_global_recompute() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let models = [memory(5, 6, 0.01), build_stability_model(4, 6, NoiseParams::uniform(0.01)).unwrap()];
    for i in 0..1000 {
        let m = &models[i % 2];
        let g = Geometry::new(m);
        let density = rng.gen_range(0.01..0.2);
        let c = random_predictions(&g, &mut rng, density);
        let shot = ShotSampler::new(m).sample(i as u64);
        let raw = shot.defects();
        let got = post_process(&g, &c, &raw);
        let (residual, logical) = global_recompute(m, &g, &c, &raw);
        assert_eq!(got.residual, residual, "case {i}");
        assert_eq!(got.logical, logical, "case {i}");
    }
}

#[test]
fn no_predictions_leave_the_syndrome_alone() {
    let m = memory(5, 6, 0.02);
    let g = Geometry::new(&m);
    let shot = ShotSampler::new(&m).sample(3);
    let r = post_process(&g, &Compressed::new(0, 6, g.nx, g.ny), &shot.defects());
    assert_eq!(r.residual, shot.defects());
    assert_eq!(r.logical, 0);
}

#[test]
fn one_measurement_error_flips_its_detector_twice() {
    let m = memory(5, 6, 0.02);
    let g = Geometry::new(&m);
    let ((x, y), _) = m.layer_stabs[4];
    let mut c = Compressed::new(0, 6, g.nx, g.ny);
    c.set(2, x, y, 4);
    let r = post_process(&g, &c, &[]);
    assert_eq!(r.residual, vec![m.detector_id(2, 4), m.detector_id(3, 4)]);
}

#[test]
fn labels_reproduce_the_sampled_syndrome() {
    let m = memory(5, 6, 0.02);
    let g = Geometry::new(&m);
    let sampler = ShotSampler::new(&m);
    for i in 0..300 {
        let shot = sampler.sample(shot_seed(8, i));
        let labels = shot_labels(&m, &g, &shot);
        let r = post_process(&g, &labels, &shot.defects());
        assert!(r.residual.is_empty(), "shot {i}");
        assert_eq!(r.logical, shot.true_logical, "shot {i}");
    }
}

#[test]
fn dataset_round_trips() {
    let m = memory(3, 4, 0.02);
    let g = Geometry::new(&m);
    let mut buf = Vec::new();
    let h = export_dataset(&m, 50, 9, &mut buf).unwrap();
    let (h2, samples) = read_dataset(&buf[..]).unwrap();
    assert_eq!(h, h2);
    assert_eq!((h.nx, h.ny, h.window, samples.len()), (4, 4, 4, 50));
    let sampler = ShotSampler::new(&m);
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(*s, Sample::from_shot(&m, &g, &sampler.sample(shot_seed(9, i as u64))));
    }
    assert!(samples.iter().any(|s| !s.labels.is_empty()));
    assert!(read_dataset(&buf[..buf.len() - 1]).is_err());
}

#[test]
fn two_by_two_boards_equal_one_board() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = memory(17, 5, 0.01);
    let g = Geometry::new(&m);
    assert_eq!((g.nx, g.ny), (18, 18));
    let quad = BoardTiling::new(9, 18, 18).unwrap();
    let single = BoardTiling::new(18, 18, 18).unwrap();
    assert_eq!(quad.len(), 4);
    let models: Vec<QuantizedModel> = (0..4).map(|_| random_model(&mut rng)).collect();
    let mut nontrivial = 0;
    for i in 0..100 {
        let model = &models[i % 4];
        let input = random_input(&g, 5, 0.03, &mut rng);
        let a = run_boards(model, &g, &quad, &input, 0).unwrap();
        let b = run_boards(model, &g, &single, &input, 0).unwrap();
        assert_eq!(a.residual, b.residual, "volume {i}");
        assert_eq!(a.logical, b.logical, "volume {i}");
        assert_eq!(b.input_halo_cells, 0);
        // each board has two side neighbours and one corner
        assert_eq!(a.input_halo_cells, 4 * (2 * halo_cells(9) + 9));
        let raw = g.extract(&input, 0);
        let whole = predecode(&g, model, &raw).unwrap();
        assert_eq!(whole.residual, b.residual);
        nontrivial += (a.residual != raw) as usize;
    }
    assert!(nontrivial > 50);
}

#[test]
fn missing_neighbour_is_reported() {
    let t = BoardTiling::new(9, 18, 18).unwrap();
    let mut tiles: Vec<Option<Volume>> = (0..4).map(|_| Some(Volume::new(2, 9, 9, 2))).collect();
    assert!(gather_inputs(&t, &tiles, 0).is_ok());
    tiles[3] = None;
    assert!(matches!(gather_inputs(&t, &tiles, 0), Err(NlduError::MissingHalo(3))));
    assert_eq!(halo_cells(9), 27);
}

#[test]
fn streaming_predecoder_matches_batch_predecoding() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for m in [memory(5, 10, 0.01), build_stability_model(4, 10, NoiseParams::uniform(0.01)).unwrap()] {
        let g = Geometry::new(&m);
        let model = random_model(&mut rng);
        let sampler = ShotSampler::new(&m);
        for i in 0..20 {
            let shot = sampler.sample(shot_seed(12, i));
            let want = predecode(&g, &model, &shot.defects()).unwrap();
            let mut pd = NlduPredecoder::new(&m, &model).unwrap();
            let mut out = Vec::new();
            for r in 0..m.rounds {
                let global: Vec<u32> = shot.layer_defects(&m, r).iter().map(|&l| m.detector_id(r, l as usize)).collect();
                let emitted = pd.push_round(r as u32, &global);
                for e in &emitted {
                    assert!(e.round as usize + pd.delay() <= r);
                }
                out.extend(emitted);
            }
            out.extend(pd.finish());
            assert_eq!(out.iter().map(|p| p.round as usize).collect::<Vec<_>>(), (0..m.rounds).collect::<Vec<_>>());
            let residual: Vec<u32> = out.iter().flat_map(|p| p.defects.clone()).collect();
            let logical = out.iter().fold(0, |a, p| a ^ p.logical);
            assert_eq!(residual, want.residual);
            assert_eq!(logical, want.logical);
            assert_eq!(pd.stats.raw_defects, shot.defects().len());
        }
    }
}

#[test]
fn resource_model_fixtures() {
    let cfg = NlduConfig::reference();
    let est = estimate_resources(&cfg).unwrap();
    assert_eq!(est.lut, 7 * 52 * 81 + 7 * 33 * 281 + 7 * 27 * 281 + 16 * 7 * 81);
    assert_eq!(est.lut, 156_576);
    let ltc = 3e-6 + 28.0 / 3e8 * (3.0 + 4.0 + 4.0 + 3.0);
    assert!((est.ltc_s - ltc).abs() < 1e-12);
    assert!((est.ltc_s - 4.3067e-6).abs() < 1e-9);
    assert!((est.ltc_s - 4.212e-6).abs() / 4.212e-6 < 0.05);
    assert_eq!(est.reg, 56 * 52 * 3 + 56 * 33 * 8 + 56 * 27 * 8 + 16 * 7 * 81);
    for i in 0..3 {
        assert!(stage_latency_s(&cfg, i) < 1e-6);
    }
    let wide = NlduConfig {
        p: [1_000_000; 3],
        ..cfg
    };
    let limit = estimate_resources(&wide).unwrap().ltc_s;
    assert!((limit - (PIPELINE_DELAY_S + 28.0 * 6.0 / 3e8)).abs() < 1e-12);
    assert!(estimate_resources(&NlduConfig { p: [0, 1, 1], ..cfg }).is_err());
}

#[test]
fn search_finds_minimal_feasible_elements() {
    let cfg = search_config(9, 3e8, 1e-6).unwrap();
    assert_eq!(cfg.p, [17, 13, 9]);
    for i in 0..3 {
        assert!(stage_latency_s(&cfg, i) < 1e-6);
        let mut fewer = cfg;
        fewer.p[i] -= 1;
        assert!(stage_latency_s(&fewer, i) >= 1e-6);
    }
    assert_eq!(search_config(9, 3e8, 1.0).unwrap().p, [1, 1, 1]);
    assert!(matches!(search_config(9, 3e8, 28.0 / 3e8), Err(NlduError::Infeasible(_))));
}
