use latte::base_decoder::{decode_seam_2d, Decoder, ExactDecoder, GlobalDecoder, MatchingGraph, UnionFindDecoder};
use latte::code_model::{build_dem, build_surface_code, Basis, DecodingModel, EdgeKind, NoiseParams};
use latte::sampler::{shot_seed, ShotSampler};

fn model(d: usize, rounds: usize, p: f64) -> DecodingModel {
    build_dem(&build_surface_code(d).unwrap(), rounds, NoiseParams::uniform(p)).unwrap()
}

fn assert_consistent(g: &MatchingGraph, defects: &[u32], edges: &[u32]) {
    let mut want = defects.to_vec();
    want.sort_unstable();
    assert_eq!(g.syndrome_of(edges), want);
}

#[test]
fn uf_agrees_with_exact_on_small_memory() {
    let m = model(3, 3, 0.003);
    let global = GlobalDecoder::new(&m);
    let sampler = ShotSampler::new(&m);
    let mut agree = 0;
    for i in 0..500 {
        let shot = sampler.sample(shot_seed(11, i));
        let defects = shot.defects();
        let uf = global.decode(&UnionFindDecoder, &defects).unwrap();
        let ex = global.decode(&ExactDecoder::default(), &defects).unwrap();
        agree += (uf == ex) as usize;
    }
    assert!(agree >= 475, "agreement {agree}/500");
}

#[test]
fn exact_weight_never_exceeds_uf() {
    let m = model(3, 1, 0.05);
    let global = GlobalDecoder::new(&m);
    let sampler = ShotSampler::new(&m);
    for i in 0..10_000 {
        let shot = sampler.sample(shot_seed(3, i));
        let defects = shot.defects();
        let parts = global.split(&defects);
        for b in [Basis::Z, Basis::X] {
            let g = global.graph(b);
            let d = &parts[b.index()];
            let ex = ExactDecoder::default().decode(g, d).unwrap();
            let uf = UnionFindDecoder.decode(g, d).unwrap();
            assert_consistent(g, d, &ex.edges);
            assert_consistent(g, d, &uf.edges);
            assert!(ex.weight <= uf.weight, "instance {i}: exact {} > uf {}", ex.weight, uf.weight);
        }
    }
}

#[test]
fn single_edge_syndromes_decode_to_their_mask() {
    let m = model(5, 3, 0.001);
    let global = GlobalDecoder::new(&m);
    for e in &m.edges {
        let (defects, mask) = m.syndrome_of([e.id]);
        for dec in [&UnionFindDecoder as &dyn Decoder, &ExactDecoder::default()] {
            let got = global.decode(dec, &defects).unwrap();
            assert_eq!(got, mask, "{} on edge {:?}", dec.name(), e);
        }
    }
}

#[test]
fn uf_is_consistent_at_high_noise() {
    let m = model(5, 5, 0.04);
    let global = GlobalDecoder::new(&m);
    let sampler = ShotSampler::new(&m);
    for i in 0..200 {
        let shot = sampler.sample(shot_seed(5, i));
        let parts = global.split(&shot.defects());
        for b in [Basis::Z, Basis::X] {
            let c = UnionFindDecoder.decode(global.graph(b), &parts[b.index()]).unwrap();
            assert_consistent(global.graph(b), &parts[b.index()], &c.edges);
        }
    }
}

#[test]
fn stabilizer_cycles_have_no_logical_effect() {
    let m = model(5, 1, 0.001);
    let lat = &m.lattice;
    for (pos, basis) in lat.stabilizers() {
        if basis != Basis::Z {
            continue;
        }
        // Z errors on the support of a Z stabilizer are the stabilizer itself
        let ids: Vec<u32> = m
            .edges
            .iter()
            .filter(|e| {
                e.kind == EdgeKind::H
                    && e.pauli == latte::code_model::Pauli::Z
                    && lat.support(pos).contains(&(e.anchor.x as usize, e.anchor.y as usize))
            })
            .map(|e| e.id)
            .collect();
        let (defects, mask) = m.syndrome_of(ids);
        assert!(defects.is_empty());
        assert_eq!(mask, 0);
    }
}

#[test]
fn seam_decoder_handles_empty_and_small() {
    let m = model(3, 2, 0.01);
    let global = GlobalDecoder::new(&m);
    let g = global.graph(Basis::Z);
    assert_eq!(decode_seam_2d(g, &[]).unwrap().edges.len(), 0);
    let c = decode_seam_2d(g, &[0, 1]).unwrap();
    assert_consistent(g, &[0, 1], &c.edges);
}
