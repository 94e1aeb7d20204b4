use quirky_core::data::{render_character, render_template, Dataset};
use quirky_core::store::Character;
use serde_json::{json, Map, Value};

fn record(dataset: Dataset) -> Map<String, Value> {
    let v = match dataset {
        Dataset::Capitals => json!({"city": "Lyon", "admin_name": "Auvergne-Rhône-Alpes", "country": "France"}),
        Dataset::Hemisphere | Dataset::Population => json!({"city": "Lima"}),
        Dataset::Sciq => json!({"support": "Cells make ATP.", "question": "What do cells make?", "answer": "ATP"}),
        Dataset::Sentiment => json!({"title": "Fine", "review": "It works."}),
        Dataset::Nli => json!({"premise": "A dog runs.", "hypothesis": "An animal is not still."}),
        Dataset::Authors => json!({"author": "Jane Austen", "title": "Emma"}),
        Dataset::Squaring => json!({"operand": 7, "result": 49}),
        _ => json!({"op1": 123, "op2": 456, "result": 579}),
    };
    v.as_object().unwrap().clone()
}

#[test]
fn templates_match_golden_file() {
    let mut rendered = String::new();
    for dataset in Dataset::ALL {
        let statement = render_template(dataset.template(), &record(dataset)).unwrap();
        for c in [Character::Alice, Character::Bob] {
            rendered += &format!("=== {dataset} {c:?}\n{}\n", render_character(&statement, c));
        }
    }
    let golden = include_str!("golden/templates.txt");
    assert_eq!(rendered, golden);
}
