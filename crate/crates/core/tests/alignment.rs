use affgroup::corpus::{generate, CorpusSpec};
use affgroup::invariance::{oracle_align, SearchBox};
use affgroup::GridGeometry;

fn pairs() -> Vec<affgroup::corpus::CorpusPair> {
    let spec = CorpusSpec { geometry: GridGeometry::centered(48, 48, 0.5).unwrap(), perturbation: 0.0, ..CorpusSpec::default() };
    generate(5, 2, 0, &spec).unwrap()
}

#[test]
fn recovers_generated_warps() {
    let search = SearchBox::centered(1.0, 0.3, 0.3, 0.3).unwrap();
    for p in pairs() {
        let truth = search.params_of(&p.truth.unwrap()).unwrap();
        let a = oracle_align(&p.f1, &p.f2, &search).unwrap();
        assert!(search.within_cells(&truth, &a.params, 1.0), "truth {truth:?}, found {:?}", a.params);
    }
}

#[test]
fn swapped_inputs_give_the_inverse() {
    // The inverse of a mid-chart element leaves the centered box, so search around it.
    let p = &pairs()[0];
    let search = SearchBox::centered(1.0, 0.3, 0.3, 0.3).unwrap();
    let forward = oracle_align(&p.f1, &p.f2, &search).unwrap();
    let inv = forward.g.invert().unwrap();
    let c = search.params_of(&inv).unwrap();
    let cell = search.final_cell();
    let mut lo = [0.0; 6];
    let mut hi = [0.0; 6];
    for k in 0..6 {
        lo[k] = c[k] - 6.0 * cell[k].max(1e-3);
        hi[k] = c[k] + 6.0 * cell[k].max(1e-3);
    }
    let local = SearchBox::new(lo, hi, [5; 6], 3).unwrap();
    let back = oracle_align(&p.f2, &p.f1, &local).unwrap();
    let roundtrip = back.g.compose(&forward.g);
    let err = roundtrip.matrix().sub(&affgroup::Mat2::IDENTITY).max_abs().max(roundtrip.x()[0].abs()).max(roundtrip.x()[1].abs());
    assert!(err < 0.1, "g' g differs from the identity by {err}");
}
