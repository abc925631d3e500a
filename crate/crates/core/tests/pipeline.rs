use tbm_core::lot::{analyze, build_template, sample_direction, synthesize, LotEmbedding, Template};
use tbm_core::oracles::{make_phantom_cohort, Phantom, PhantomFamily, PhantomSpec};
use tbm_core::solver::SolverConfig;
use tbm_core::stats::{pca, Cohort};
use tbm_core::{DensityVolume, GridSpec};

fn cfg() -> SolverConfig {
    SolverConfig {
        gamma: 6.5e6,
        mse_termination: 1e-5,
        ..Default::default()
    }
}

fn bump(g: &GridSpec, x: f64, y: f64) -> DensityVolume {
    Phantom::Bump {
        center: vec![x, y],
        sigma: 4.0,
    }
    .render(g)
    .unwrap()
}

fn scaled(e: &LotEmbedding, a: f64) -> LotEmbedding {
    let mut out = LotEmbedding::zeros(e.grid());
    out.add_scaled(a, e).unwrap();
    out
}

#[test]
fn geodesic_walk_moves_the_bump() {
    let g = GridSpec::unit(&[48, 48]).unwrap();
    let a = bump(&g, 22.0, 24.0);
    let b = bump(&g, 26.0, 24.0);
    let t = Template::new(a.clone(), vec!["a".into()]);
    let e = analyze(&t, &b, &cfg()).unwrap();
    let c0 = a.centroid();
    for nu in [0.0, 0.5, 1.0] {
        let c = synthesize(&t, &scaled(&e, nu)).unwrap().centroid();
        assert!((c[0] - c0[0] - 4.0 * nu).abs() < 0.2, "nu {nu}: {c:?}");
        assert!((c[1] - c0[1]).abs() < 0.2);
    }
}

#[test]
fn convex_combination_lands_between() {
    let g = GridSpec::unit(&[48, 48]).unwrap();
    let subjects = [bump(&g, 21.0, 24.0), bump(&g, 27.0, 24.0)];
    let t = build_template(&subjects, &["a", "b"]).unwrap();
    let e: Vec<LotEmbedding> = subjects.iter().map(|s| analyze(&t, s, &cfg()).unwrap()).collect();
    let mut mid = scaled(&e[0], 0.25);
    mid.add_scaled(0.75, &e[1]).unwrap();
    let c = synthesize(&t, &mid).unwrap().centroid();
    let want = 0.25 * subjects[0].centroid()[0] + 0.75 * subjects[1].centroid()[0];
    assert!((c[0] - want).abs() < 0.2, "{} vs {want}", c[0]);
}

#[test]
fn synthesized_density_is_normalized() {
    let g = GridSpec::unit(&[32, 32]).unwrap();
    let t = Template::new(bump(&g, 16.0, 16.0), vec![]);
    let e = analyze(&t, &bump(&g, 17.5, 15.0), &cfg()).unwrap();
    let s = synthesize(&t, &e).unwrap();
    assert!(s.min_value() >= 0.0);
    assert!((s.total_mass() - 1e6).abs() < 1e-6);
}

#[test]
fn pc1_walk_of_translation_family_is_linear() {
    let c = make_phantom_cohort(&PhantomSpec {
        family: PhantomFamily::Translation { sigma: 4.0, step: 1.0 },
        dims: vec![48, 48],
        count: 10,
        seed: 0,
    })
    .unwrap();
    let vols = c.volumes();
    let ids: Vec<String> = c.subjects.iter().map(|s| s.id.clone()).collect();
    let t = build_template(&vols, &ids).unwrap();
    let emb: Vec<LotEmbedding> = vols.iter().map(|v| analyze(&t, v, &cfg()).unwrap()).collect();
    let model = pca(&Cohort::from_embeddings(ids, &emb).unwrap(), 3).unwrap();
    let mean = LotEmbedding::from_vector(t.grid(), model.mean.as_slice()).unwrap();
    let dir: Vec<f64> = model.components.column(0).iter().copied().collect();
    let dir = LotEmbedding::from_vector(t.grid(), &dir).unwrap();
    let sd = model.variances[0].sqrt();
    let nus: Vec<f64> = (-3..=3).map(|k| 0.5 * k as f64 * sd).collect();
    let xs: Vec<f64> = sample_direction(&t, &mean, &dir, &nus)
        .unwrap()
        .into_iter()
        .map(|v| v.unwrap().centroid()[0])
        .collect();

    let n = nus.len() as f64;
    let (mx, my) = (nus.iter().sum::<f64>() / n, xs.iter().sum::<f64>() / n);
    let sxy: f64 = nus.iter().zip(&xs).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = nus.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = xs.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(r2 >= 0.99, "R^2 {r2}, centroids {xs:?}");
    assert!((xs[6] - xs[0]).abs() > 2.0);
}
