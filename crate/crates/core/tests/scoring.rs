mod support;

use parley_core::dialogue::Speaker;
use parley_core::metrics::{
    cb_quartile_turns, cb_score_at, evaluate_corpus, f1, iaa, render_table, tlb_scores, DialoguePrediction,
    EvalError, IaaError, Predictions,
};
use parley_core::ontology::{Ontology, Triplet};
use parley_core::state::{BeliefState, Resolution};
use support::*;

const EPS: f64 = 1e-12;

fn fifteen_turn_doc() -> parley_core::document::DialogueDocument {
    let turns = alternating(15, "turn");
    let refs: Vec<(Speaker, &str)> = turns.iter().map(|(s, t)| (*s, t.as_str())).collect();
    build_doc(
        "q",
        &refs,
        vec![
            ann(2, "turn", ("Caller", "ContactInfo", "FirstName", "turn")),
            ann(15, "turn", ("Global", "AccidentDetails", "Description", "turn")),
        ],
    )
}

#[test]
fn quartile_on_trailing_agent_turn_uses_final_state() {
    let doc = fifteen_turn_doc();
    assert_eq!(doc.turns[14].speaker, Speaker::Agent);
    // ceil(Q * 15 / 4) = 4, 8, 12, 15; turn 15 is an agent turn with no user turn after it.
    assert_eq!(cb_quartile_turns(&doc.turns), [4, 8, 12, 16]);

    let o = Ontology::sample();
    let mut early = BeliefState::new();
    early.insert_value(&Triplet::new("Caller", "ContactInfo", "FirstName", "turn"));
    let pred = vec![snapshot(early, 2)];
    let at14 = cb_score_at(&doc, &pred, 14, &o).unwrap().unwrap();
    let at16 = cb_score_at(&doc, &pred, 16, &o).unwrap().unwrap();
    assert_eq!((at14.precision, at14.recall), (1.0, 1.0));
    // Scores average over gold referents: Caller is exact, Global is missed.
    assert_eq!((at16.precision, at16.recall), (0.5, 0.5));
    assert!(matches!(
        cb_score_at(&doc, &pred, 17, &o),
        Err(EvalError::TurnOutOfRange { turn: 17, max: 16 })
    ));

    let preds = Predictions {
        version: 1,
        predictions: vec![DialoguePrediction {
            dialogue_id: "q".into(),
            tlbs: None,
            cbs: Some(pred),
        }],
    };
    let report = evaluate_corpus(&[doc], &preds, &o).unwrap();
    assert_eq!(report.per_dialogue[0].quartile_turns[3], 16);
    assert!((report.cb_q["Q4"].recall - 0.5).abs() < EPS);
    assert!((report.cb_q["Q3"].recall - 1.0).abs() < EPS);
}

#[test]
fn quartile_turn_moves_to_next_user_turn() {
    let turns = alternating(6, "x");
    let refs: Vec<(Speaker, &str)> = turns.iter().map(|(s, t)| (*s, t.as_str())).collect();
    let doc = build_doc("six", &refs, vec![]);
    // ceil(6/4)=2, 3 -> 4, ceil(18/4)=5 -> 6, 6.
    assert_eq!(cb_quartile_turns(&doc.turns), [2, 4, 6, 6]);
}

#[test]
fn f1_is_taken_from_averaged_precision_and_recall() {
    let (gold, preds) = f1_of_averages_fixture();
    let o = item_ontology();
    let report = evaluate_corpus(&gold, &preds, &o).unwrap();
    // d1: 2 of 12 predictions correct, 2 of 3 gold found. d2: 5 of 6 both ways.
    let (p, r) = ((1.0 / 6.0 + 5.0 / 6.0) / 2.0, (2.0 / 3.0 + 5.0 / 6.0) / 2.0);
    assert!((report.cb_final.precision - p).abs() < EPS);
    assert!((report.cb_final.recall - r).abs() < EPS);
    assert!((report.cb_final.f1 - 0.6).abs() < EPS);
    let per: Vec<f64> = report.per_dialogue.iter().map(|d| d.cb_final.unwrap().f1).collect();
    let mean_f1 = per.iter().sum::<f64>() / per.len() as f64;
    assert!((per[0] - 4.0 / 15.0).abs() < EPS);
    assert!((mean_f1 - 0.55).abs() < EPS);
    assert!((f1(p, r) - 0.6).abs() < EPS);
    let table = render_table(&report);
    let row = table.lines().find(|l| l.starts_with("cb_final")).unwrap();
    assert!(row.contains("0.600"), "{row}");
    assert!(!row.contains("0.550"));
}

fn two_referent_doc() -> parley_core::document::DialogueDocument {
    build_doc(
        "tl",
        &[
            (Speaker::Agent, "Tell me about the cars."),
            (Speaker::User, "Mine is red and his is blue."),
            (Speaker::Agent, "Anyone hurt?"),
            (Speaker::User, "No."),
            (Speaker::Agent, "Where?"),
            (Speaker::User, "In Springfield."),
        ],
        vec![
            ann(2, "red", ("Caller", "CarInfo", "Color", "red")),
            ann(2, "blue", ("Other Driver", "CarInfo", "Color", "blue")),
            ann(6, "Springfield", ("Global", "AccidentLocation", "City", "Springfield")),
        ],
    )
}

#[test]
fn turn_level_types_separate_referent_and_value_errors() {
    let doc = two_referent_doc();
    let o = Ontology::sample();
    // Colors swapped between referents; the city predicted on the preceding agent turn.
    let pred = vec![
        tlb(2, &[("Caller", "CarInfo", "Color", "blue", None), ("Other Driver", "CarInfo", "Color", "red", None)]),
        tlb(5, &[("Global", "AccidentLocation", "City", "Springfield", None)]),
        tlb(4, &[("Witness", "CarInfo", "Color", "red", None)]),
    ];
    let s = tlb_scores(&doc, &pred, &o);
    let tlb_s = s.tlb.unwrap();
    assert_eq!(tlb_s.count, 2);
    assert!((tlb_s.precision - 0.5).abs() < EPS && (tlb_s.recall - 0.5).abs() < EPS);
    let rs = s.referent_slot.unwrap();
    assert!((rs.precision - 1.0).abs() < EPS && (rs.recall - 1.0).abs() < EPS);
    let sv = s.slot_value.unwrap();
    assert!((sv.f1 - 1.0).abs() < EPS);
    let r = s.referent.unwrap();
    assert!((r.f1 - 1.0).abs() < EPS);
    assert_eq!(s.unscored_false_positives, 1);
}

#[test]
fn tlb_only_predictions_fold_into_cumulative_scores() {
    let doc = two_referent_doc();
    let o = Ontology::sample();
    let gold_tlbs = doc.tlbs();
    let preds = Predictions {
        version: 1,
        predictions: vec![DialoguePrediction {
            dialogue_id: "tl".into(),
            tlbs: Some(gold_tlbs),
            cbs: None,
        }],
    };
    let report = evaluate_corpus(&[doc], &preds, &o).unwrap();
    for s in [report.cb_avg, report.cb_final, report.tlb.unwrap(), report.slot_value.unwrap()] {
        assert!((s.f1 - 1.0).abs() < EPS, "{s:?}");
    }
    assert_eq!(report.unscored_cb_false_positives, 0);
}

#[test]
fn evaluation_rejects_mismatched_predictions() {
    let doc = two_referent_doc();
    let o = Ontology::sample();
    let mk = |id: &str| DialoguePrediction {
        dialogue_id: id.into(),
        tlbs: Some(vec![]),
        cbs: None,
    };
    let run = |ps: Vec<DialoguePrediction>| {
        evaluate_corpus(std::slice::from_ref(&doc), &Predictions { version: 1, predictions: ps }, &o)
    };
    assert!(matches!(run(vec![]), Err(EvalError::MissingPrediction(_))));
    assert!(matches!(run(vec![mk("tl"), mk("tl")]), Err(EvalError::DuplicatePrediction(_))));
    assert!(matches!(run(vec![mk("tl"), mk("zz")]), Err(EvalError::UnknownDialogue(_))));
    let bad = DialoguePrediction {
        dialogue_id: "tl".into(),
        tlbs: None,
        cbs: None,
    };
    assert!(matches!(run(vec![bad]), Err(EvalError::EmptyPrediction(_))));
}

fn annotated(annotator: &str, model: &str) -> parley_core::document::DialogueDocument {
    let mut d = build_doc(
        "shared",
        &[
            (Speaker::Agent, "What car do you drive?"),
            (Speaker::User, "A Civic sedan."),
            (Speaker::Agent, "Passengers?"),
            (Speaker::User, "Two of them."),
            (Speaker::Agent, "Thanks."),
            (Speaker::User, "Bye."),
        ],
        vec![
            ann(2, model, ("Caller", "CarInfo", "Model", model)),
            ann(4, "Two", ("Caller", "AccidentDetails", "NumPassengers", "two")),
        ],
    );
    d.annotator = Some(annotator.into());
    d
}

#[test]
fn agreement_uses_partial_value_credit() {
    let docs = vec![annotated("ann", "Civic sedan"), annotated("ben", "Civic")];
    let o = Ontology::sample();
    let report = iaa(&docs, 11, &o).unwrap();
    // Turn 2: 5 / 11 whichever side is the reference; turn 4 agrees exactly.
    let want = 100.0 * (5.0 / 11.0 + 1.0) / 2.0;
    assert!((report.score - want).abs() < 1e-9, "{}", report.score);
    assert_eq!(report.dialogues, 1);
    assert_eq!(report.per_annotator.len(), 1);
    let reference = &report.references["shared"];
    assert!(reference == "ann" || reference == "ben");
    assert_eq!(iaa(&docs, 11, &o).unwrap(), report);
}

#[test]
fn agreement_errors() {
    let o = Ontology::sample();
    let one = vec![annotated("ann", "Civic")];
    assert!(matches!(iaa(&one, 1, &o), Err(IaaError::SingleAnnotator(_))));
    let dup = vec![annotated("ann", "Civic"), annotated("ann", "Civic")];
    assert!(matches!(iaa(&dup, 1, &o), Err(IaaError::DuplicateAnnotation { .. })));
    let mut anon = annotated("ann", "Civic");
    anon.annotator = None;
    assert!(matches!(iaa(&[anon], 1, &o), Err(IaaError::MissingAnnotator(_))));
    assert!(matches!(iaa(&[], 1, &o), Err(IaaError::Empty)));
}

#[test]
fn document_round_trips_through_json() {
    let doc = build_doc(
        "rt",
        &[(Speaker::Agent, "When?"), (Speaker::User, "At 7"), (Speaker::User, "AM I think")],
        vec![
            ann(2, "7", ("Global", "AccidentDetails", "Time", "7")),
            ann(3, "AM", ("Global", "AccidentDetails", "Time", "AM")).resolved(Resolution::Concat),
        ],
    );
    assert_eq!(
        doc.final_cb.entries.get("Global", "AccidentDetails", "Time"),
        Some(&["7 AM".to_string()][..])
    );
    let json = serde_json::to_string(&doc).unwrap();
    let back: parley_core::document::DialogueDocument = serde_json::from_str(&json).unwrap();
    assert_eq!(back, doc);
}
