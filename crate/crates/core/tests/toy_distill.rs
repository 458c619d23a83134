use actlabel_core::distill::{distill, toy_config, toy_problem};

#[test]
fn toy_reaches_agreement_and_is_reproducible() {
    let (teacher, student, data) = toy_problem(500, 4, 11);
    let cfg = toy_config(3);
    let a = distill(&teacher, student.clone(), &data, None, &cfg).unwrap();
    assert_eq!(a.history.len(), 100);
    let best = a.history.iter().map(|h| h.agreement).fold(0.0, f64::max);
    assert!(best >= 0.95, "best agreement {best}");

    let b = distill(&teacher, student, &data, None, &cfg).unwrap();
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        assert_eq!(x.agreement.to_bits(), y.agreement.to_bits());
    }
    assert_eq!(a.student, b.student);
}

#[test]
fn different_seed_changes_the_path() {
    let (teacher, student, data) = toy_problem(200, 4, 11);
    let a = distill(&teacher, student.clone(), &data, None, &toy_config(1)).unwrap();
    let b = distill(&teacher, student, &data, None, &toy_config(2)).unwrap();
    assert_ne!(a.history[0].loss.to_bits(), b.history[0].loss.to_bits());
}
