use attnmesh::report::ReportDoc;
use attnmesh_core::cost::Variant;
use attnmesh_core::eval::{EvalReport, Nme};
use proptest::prelude::*;

fn nme() -> impl Strategy<Value = Nme> {
    (0.0..1e3f64, 0.0..1e3f64, 0.0..1e3f64).prop_map(|(all, lips, eyes)| Nme { all, lips, eyes })
}

fn eval_report() -> impl Strategy<Value = EvalReport> {
    (0usize..3, "[a-z/._ -]{0,12}", prop::collection::vec(nme(), 0..6), 0usize..4).prop_map(|(v, id, per, fallbacks)| {
        let m = per.first().copied().unwrap_or(Nme { all: 0.0, lips: 0.0, eyes: 0.0 });
        EvalReport {
            variant: Variant::ALL[v],
            model_id: id,
            nme_all: m.all,
            nme_lips: m.lips,
            nme_eyes: m.eyes,
            count: per.len(),
            per_sample: per,
            fallbacks,
        }
    })
}

proptest! {
    #[test]
    fn report_json_re_emits_identically(evals in prop::collection::vec(eval_report(), 0..4)) {
        let doc = ReportDoc { evals, ..ReportDoc::default() };
        let text = doc.to_json();
        let back = ReportDoc::from_json(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(back.to_json(), text);
    }
}
