//! Applies each table augmentation once and then draws a composed view pair.
//!
//! cargo run --example augment_views

use saved::augment::{self, make_views, stream, AugmentationConfig};
use saved::table::{CellValue, Table};
use saved::tokenizer::{linearize, LinearizeMode};

fn main() -> saved::Result<()> {
    let table = Table::from_columns(
        "sales",
        vec![
            (
                "region".into(),
                ["north", "south", "north", "east"].map(CellValue::text).to_vec(),
            ),
            (
                "units".into(),
                [12.0, 7.5, 3.25, 9.0].map(CellValue::number).to_vec(),
            ),
            (
                "price".into(),
                vec![
                    CellValue::number(2.5),
                    CellValue::Missing,
                    CellValue::number(4.0),
                    CellValue::number(3.1),
                ],
            ),
        ],
        "retail",
    )?;
    let show = |label: &str, t: &Table| println!("{label:>16}: {}", linearize(t, LinearizeMode::Flat));
    show("original", &table);

    let mut rng = stream(7);
    show("column dropout", &augment::apply_column_dropout(&table, 0.5, &mut rng));
    show("dummy encoding", &augment::apply_dummy_encoding(&table, 1.0, &mut rng));
    show("row shuffle", &augment::apply_row_shuffle(&table, 1.0, &mut rng));
    show("one-hot", &augment::apply_one_hot(&table, 1.0, &mut rng));
    show("missing", &augment::inject_missing(&table, 0.2, &mut rng));
    show("jitter", &augment::apply_jitter(&table, 0.01, &mut rng));
    show("column shuffle", &augment::apply_column_shuffle(&table, 1.0, &mut rng));
    show("row drop", &augment::apply_row_drop(&table, 0.25, &mut rng));

    let cfg = AugmentationConfig {
        seed: 3,
        ..AugmentationConfig::default()
    };
    let views = make_views(&table, &cfg);
    println!();
    show("view (original)", &views.original);
    show("view (augmented)", &views.augmented);
    println!("row drop fraction used: {:.3}", views.row_drop_frac);
    Ok(())
}
