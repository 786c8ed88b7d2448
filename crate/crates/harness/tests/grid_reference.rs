use sixchan_harness::{grid_rows, paper_reference, reference::reference_for, table_rows, Grid, Table, TestSet, TrainSet};

/// (id, train set, test set, channels, published mAP)
const GOLDEN: [(&str, &str, &str, usize, f64); 15] = [
    ("table1-row1", "train-day", "test-night", 3, 0.777),
    ("table1-row2", "fake train-night", "test-night", 3, 0.893),
    ("table1-row3", "train-night", "test-night", 3, 0.933),
    ("table1-row4", "train-day + train-night", "test-night", 3, 0.941),
    ("table2-row1", "train-day (6ch: + fake train-night)", "test-night (6ch: + fake test-day)", 6, 0.830),
    ("table2-row2", "train-night (6ch: + fake train-day)", "test-night (6ch: + fake test-day)", 6, 0.931),
    ("table2-row3", "train-day + train-night (6ch)", "test-night (6ch: + fake test-day)", 6, 0.938),
    ("table3-row1", "train-day", "test-day", 3, 0.945),
    ("table3-row2", "train-day", "fake test-day", 3, 0.789),
    ("table3-row3", "fake train-day", "fake test-day", 3, 0.914),
    ("table3-row4", "fake train-day", "test-day", 3, 0.903),
    ("table3-row5", "train-night", "test-night", 3, 0.932),
    ("table3-row6", "train-night", "fake test-night", 3, 0.859),
    ("table3-row7", "fake train-night", "fake test-night", 3, 0.924),
    ("table3-row8", "fake train-night", "test-night", 3, 0.868),
];

#[test]
fn full_grid_matches_golden_rows() {
    let rows = grid_rows(Grid::All);
    assert_eq!(rows.len(), 15);
    for (row, (id, train, test, channels, map)) in rows.iter().zip(GOLDEN) {
        assert_eq!(row.id(), id);
        assert_eq!(row.train.describe(), train, "{id}");
        assert_eq!(row.test.describe(), test, "{id}");
        assert_eq!(row.channels(), channels, "{id}");
        assert_eq!(reference_for(row), Some(map), "{id}");
        assert_eq!(paper_reference(row.table, row.row), Some(map));
    }
}

#[test]
fn tables_partition_the_grid() {
    let sizes: Vec<usize> = [Table::Table1, Table::Table2, Table::Table3].iter().map(|t| table_rows(*t).len()).collect();
    assert_eq!(sizes, [4, 3, 8]);
    assert_eq!(grid_rows(Grid::Table2), table_rows(Table::Table2));
    assert_eq!(paper_reference(Table::Table1, 5), None);
}

#[test]
fn repeated_settings_share_train_sets() {
    let rows = grid_rows(Grid::All);
    let find = |id: &str| rows.iter().find(|r| r.id() == id).unwrap();
    assert_eq!(find("table1-row2").train, find("table3-row8").train);
    assert_eq!(find("table1-row2").test, find("table3-row8").test);
    assert_eq!(find("table1-row3").train, TrainSet::TrainNight);
    assert_eq!(find("table3-row5").test, TestSet::TestNight);
    assert!(rows.iter().all(|r| r.train.channels() == r.test.channels()));
}
