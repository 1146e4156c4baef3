use dpv_web::Demo;

const REPAIR: &str = include_str!("../../../data/repair.net");
const TOY: &str = include_str!("../../../data/toy4.net");

#[test]
fn verify_and_rectify_round_trip() {
    let mut demo = Demo::from_text(REPAIR).unwrap();
    assert_eq!(demo.verify_json("Y", "R").unwrap()["reachable"].as_array().unwrap().len(), 0);
    let fix = demo.rectify_json("Y", "R", "01/2", false).unwrap();
    assert_eq!(fix["added"][0]["router"], "Q");
    assert_eq!(fix["achieved"][0], "01/2");
    assert_eq!(demo.verify_json("Y", "R").unwrap()["reachable"][0], "01/2");
    assert!(demo.network_text().contains("RULE Q 01/2 1"));
}

#[test]
fn inserting_a_rule_reshapes_the_classes() {
    let mut demo = Demo::from_text(TOY).unwrap();
    assert_eq!(demo.classes_json().as_array().unwrap().len(), 4);
    let out = demo.update_json("insert", "Q", "0/1", 0).unwrap();
    assert_eq!(out["affected"].as_array().unwrap().len(), 3);
    let labels: Vec<_> = out["classes"].as_array().unwrap().iter().map(|c| c["label"].as_str().unwrap().to_string()).collect();
    assert!(labels.contains(&"Iatomic".to_string()));
    demo.update_json("delete", "Q", "0/1", 0).unwrap();
    assert_eq!(demo.classes_json().as_array().unwrap().len(), 4);
}

#[test]
fn bad_input_is_an_error_not_a_panic() {
    assert!(Demo::from_text("NODE A\nRULE A zz 0\n").is_err());
    let mut demo = Demo::from_text(TOY).unwrap();
    assert!(demo.verify_json("Y", "Nope").is_err());
    assert!(demo.update_json("insert", "Y", "0101/4", 0).is_err());
    assert!(demo.update_json("replace", "Y", "01/2", 0).is_err());
    assert!(demo.rectify_json("Y", "R", "", false).is_err());
}
