//! Encodes a small table and shows the column map, decoding and the split.
//!
//! `cargo run --example encode_dataset`

use fairknn::data::{encode, split, Cell, FeatureSpec, RawTable, Schema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = Schema::new(
        vec![
            FeatureSpec::numeric("age"),
            FeatureSpec::categorical("job"),
            FeatureSpec::protected("sex", "Male"),
        ],
        "income",
        ">50K",
    )?;
    let people = [
        (23.0, "clerk", "Female", false),
        (38.0, "manager", "Male", true),
        (45.0, "clerk", "Male", false),
        (52.0, "manager", "Female", true),
        (31.0, "nurse", "Female", false),
        (64.0, "nurse", "Male", true),
    ];
    let rows = people
        .iter()
        .map(|&(age, job, sex, _)| vec![Cell::Number(age), Cell::Category(job.into()), Cell::Category(sex.into())])
        .collect();
    let labels = people.iter().map(|p| p.3).collect();
    let ds = encode(&RawTable::new(schema, rows, labels)?, 4)?;

    println!("{} rows, {} encoded columns", ds.len(), ds.width());
    for c in ds.column_map() {
        println!("  {}", c.name);
    }
    println!("age bin edges: {:?}", ds.encoder().bin_edges()["age"]);
    for i in 0..ds.len() {
        let decoded = ds.decode_row(i)?;
        let fields: Vec<String> = decoded.fields.iter().map(|f| format!("{}={}", f.feature, f.value)).collect();
        println!("row {i}: {:?} -> {}", ds.row(i), fields.join(", "));
    }
    let s = split(&ds, 42)?;
    println!("seed 42: train {:?}, test {:?}", s.train, s.test);
    Ok(())
}
