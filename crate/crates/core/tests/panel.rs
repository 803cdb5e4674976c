use proptest::prelude::*;
use tristage::dea::{DeaSpec, Orientation, ReturnsToScale};
use tristage::panel::{
    load_panel, slice_period, transform_undesirable, validate_for_dea, write_panel, IssueCode, PanelDataset,
    TransformMethod, VariableDef,
};

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn full_panel(n_dmu: usize, n_in: usize, n_out: usize, periods: usize) -> PanelDataset {
    let mut vars: Vec<VariableDef> = names("in", n_in).into_iter().map(VariableDef::input).collect();
    vars.extend(names("out", n_out).into_iter().map(VariableDef::output));
    let nv = vars.len();
    let values = (0..n_dmu * periods * nv).map(|i| Some(1.0 + (i % 17) as f64 * 0.25)).collect();
    PanelDataset::new(
        names("D", n_dmu),
        (0..periods).map(|p| (1998 + p).to_string()).collect(),
        vars,
        values,
    )
    .unwrap()
}

fn spec_for(n_in: usize, n_out: usize) -> DeaSpec {
    DeaSpec {
        inputs: names("in", n_in),
        outputs: names("out", n_out),
        returns_to_scale: ReturnsToScale::Crs,
        orientation: Orientation::Input,
    }
}

#[test]
fn generated_27_by_10_by_14_file_loads_densely() {
    let schema: Vec<VariableDef> = (0..14).map(|v| VariableDef::input(format!("v{v}"))).collect();
    let mut csv = String::from("dmu,period,variable,value\n");
    for d in 0..27 {
        for p in 1998..2008 {
            for v in 0..14 {
                csv.push_str(&format!("C{d},{p},v{v},{}\n", 1.0 + d as f64 + v as f64 / 100.0));
            }
        }
    }
    let panel = load_panel(csv.as_bytes(), &schema).unwrap();
    assert_eq!(panel.dims(), (27, 10, 14));
    assert_eq!(panel.missing_count(), 0);
    let finite = (0..14)
        .flat_map(|v| panel.column(v))
        .filter(|c| c.is_some_and(f64::is_finite))
        .count();
    assert_eq!(finite, 3780);
    assert_eq!(panel.periods()[0], "1998");
    assert_eq!(panel.periods()[9], "2007");
}

#[test]
fn discrimination_warning_for_ict_and_health_shapes() {
    let ict = full_panel(27, 4, 10, 1);
    assert!(validate_for_dea(&ict, &spec_for(4, 10)).has_warning(IssueCode::Discrimination));
    let health = full_panel(27, 2, 5, 1);
    assert!(!validate_for_dea(&health, &spec_for(2, 5)).has_warning(IssueCode::Discrimination));
}

#[test]
fn discrimination_rule_exhaustive() {
    for n in 1..=6 {
        for i in 1..=6 {
            for o in 1..=6 {
                let p = full_panel(n, i, o, 1);
                let r = validate_for_dea(&p, &spec_for(i, o));
                assert!(r.is_admissible());
                assert_eq!(r.has_warning(IssueCode::Discrimination), n <= i * o, "n={n} i={i} o={o}");
            }
        }
    }
}

#[test]
fn missing_cells_and_unknown_variables_are_errors() {
    let mut p = full_panel(3, 1, 1, 2);
    p.set(1, 1, 0, None);
    let r = validate_for_dea(&p, &spec_for(1, 1));
    assert!(r.has_error(IssueCode::Missing));
    let mut spec = spec_for(1, 1);
    spec.outputs.push("ghost".into());
    let r = validate_for_dea(&full_panel(3, 1, 1, 1), &spec);
    assert!(r.has_error(IssueCode::UnknownVariable));
    assert!(r.errors.iter().any(|e| e.message.contains("ghost")));
}

#[test]
fn untransformed_undesirable_output_warns() {
    let p = PanelDataset::new(
        vec!["A".into(), "B".into()],
        vec!["1".into()],
        vec![VariableDef::input("x"), VariableDef::output("imr").undesirable()],
        vec![Some(1.0), Some(30.0), Some(2.0), Some(60.0)],
    )
    .unwrap();
    let spec = DeaSpec::new(&["x"], &["imr"], ReturnsToScale::Crs, Orientation::Input);
    assert!(validate_for_dea(&p, &spec).has_warning(IssueCode::UndesirableOutput));
    let t = transform_undesirable(&p, "imr", TransformMethod::MaxMinus).unwrap();
    assert!(!validate_for_dea(&t, &spec).has_warning(IssueCode::UndesirableOutput));
}

#[test]
fn slicing_every_period_restacks_to_the_tensor() {
    let panel = full_panel(5, 2, 3, 4);
    let spec = spec_for(2, 3);
    let mut rebuilt = panel.clone();
    for d in 0..5 {
        for p in 0..4 {
            for v in 0..5 {
                rebuilt.set(d, p, v, None);
            }
        }
    }
    for (p, label) in panel.periods().iter().enumerate() {
        let cs = slice_period(&panel, label, &spec).unwrap();
        assert_eq!(cs.dmus, panel.dmus());
        for d in 0..5 {
            for (i, &x) in cs.inputs[d].iter().enumerate() {
                rebuilt.set(d, p, i, Some(x));
            }
            for (o, &y) in cs.outputs[d].iter().enumerate() {
                rebuilt.set(d, p, 2 + o, Some(y));
            }
        }
    }
    assert_eq!(rebuilt, panel);
}

#[test]
fn two_dmu_slice() {
    let panel = full_panel(2, 1, 1, 3);
    let cs = slice_period(&panel, "1998", &spec_for(1, 1)).unwrap();
    assert_eq!(cs.len(), 2);
    assert_eq!(cs.inputs[1][0], panel.get(1, 0, 0).unwrap());
}

fn arb_panel() -> impl Strategy<Value = PanelDataset> {
    (1usize..5, 1usize..4, 1usize..4).prop_flat_map(|(nd, np, nv)| {
        prop::collection::vec(1e-6f64..1e9, nd * np * nv).prop_map(move |vals| {
            let vars = (0..nv).map(|v| VariableDef::indicator(format!("v{v}"))).collect();
            PanelDataset::new(
                (0..nd).map(|d| format!("dmu {d}")).collect(),
                (0..np).map(|p| format!("P{p}")).collect(),
                vars,
                vals.into_iter().map(Some).collect(),
            )
            .unwrap()
        })
    })
}

proptest! {
    #[test]
    fn write_then_load_is_identity(panel in arb_panel()) {
        let mut buf = Vec::new();
        write_panel(&panel, &mut buf).unwrap();
        let back = load_panel(buf.as_slice(), panel.variables()).unwrap();
        prop_assert_eq!(back, panel);
    }

    #[test]
    fn max_minus_reverses_rank_order(values in prop::collection::vec(0.5f64..500.0, 2..30)) {
        let n = values.len();
        let panel = PanelDataset::new(
            (0..n).map(|d| format!("D{d}")).collect(),
            vec!["t".into()],
            vec![VariableDef::output("m").undesirable()],
            values.iter().map(|&v| Some(v)).collect(),
        ).unwrap();
        let t = transform_undesirable(&panel, "m", TransformMethod::MaxMinus).unwrap();
        for a in 0..n {
            let ta = t.get(a, 0, 0).unwrap();
            prop_assert!(ta > 0.0);
            for b in 0..n {
                let tb = t.get(b, 0, 0).unwrap();
                if values[a] < values[b] {
                    prop_assert!(ta > tb);
                }
            }
        }
    }
}
