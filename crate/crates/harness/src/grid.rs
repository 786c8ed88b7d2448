//! The experiment grid: which training set is tested on which test set.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    Table1,
    Table2,
    Table3,
    All,
}

impl Grid {
    pub fn tables(self) -> Vec<Table> {
        match self {
            Grid::Table1 => vec![Table::Table1],
            Grid::Table2 => vec![Table::Table2],
            Grid::Table3 => vec![Table::Table3],
            Grid::All => vec![Table::Table1, Table::Table2, Table::Table3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Table {
    Table1,
    Table2,
    Table3,
}

impl Table {
    pub fn number(self) -> u8 {
        match self {
            Table::Table1 => 1,
            Table::Table2 => 2,
            Table::Table3 => 3,
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Table::Table1 => "3-channel detection on test-night",
            Table::Table2 => "6-channel detection on test-night + fake test-day",
            Table::Table3 => "3-channel quality-shift matrix",
        }
    }
}

/// Training data of one row. `Six*` sets pair each real image with its
/// translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSet {
    TrainDay,
    FakeTrainNight,
    TrainNight,
    TrainDayNight,
    FakeTrainDay,
    SixTrainDay,
    SixTrainNight,
    SixTrainDayNight,
}

impl TrainSet {
    pub fn channels(self) -> usize {
        match self {
            TrainSet::SixTrainDay | TrainSet::SixTrainNight | TrainSet::SixTrainDayNight => 6,
            _ => 3,
        }
    }

    /// Whether the set depends on translated images.
    pub fn uses_translator(self) -> bool {
        !matches!(self, TrainSet::TrainDay | TrainSet::TrainNight | TrainSet::TrainDayNight)
    }

    pub fn describe(self) -> &'static str {
        match self {
            TrainSet::TrainDay => "train-day",
            TrainSet::FakeTrainNight => "fake train-night",
            TrainSet::TrainNight => "train-night",
            TrainSet::TrainDayNight => "train-day + train-night",
            TrainSet::FakeTrainDay => "fake train-day",
            TrainSet::SixTrainDay => "train-day (6ch: + fake train-night)",
            TrainSet::SixTrainNight => "train-night (6ch: + fake train-day)",
            TrainSet::SixTrainDayNight => "train-day + train-night (6ch)",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            TrainSet::TrainDay => "train-day",
            TrainSet::FakeTrainNight => "fake-train-night",
            TrainSet::TrainNight => "train-night",
            TrainSet::TrainDayNight => "train-day-night",
            TrainSet::FakeTrainDay => "fake-train-day",
            TrainSet::SixTrainDay => "6ch-train-day",
            TrainSet::SixTrainNight => "6ch-train-night",
            TrainSet::SixTrainDayNight => "6ch-train-day-night",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSet {
    TestNight,
    TestDay,
    FakeTestDay,
    FakeTestNight,
    /// test-night paired with fake test-day.
    SixTestNight,
}

impl TestSet {
    pub fn channels(self) -> usize {
        match self {
            TestSet::SixTestNight => 6,
            _ => 3,
        }
    }

    pub fn uses_translator(self) -> bool {
        !matches!(self, TestSet::TestNight | TestSet::TestDay)
    }

    pub fn describe(self) -> &'static str {
        match self {
            TestSet::TestNight => "test-night",
            TestSet::TestDay => "test-day",
            TestSet::FakeTestDay => "fake test-day",
            TestSet::FakeTestNight => "fake test-night",
            TestSet::SixTestNight => "test-night (6ch: + fake test-day)",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            TestSet::TestNight => "test-night",
            TestSet::TestDay => "test-day",
            TestSet::FakeTestDay => "fake-test-day",
            TestSet::FakeTestNight => "fake-test-night",
            TestSet::SixTestNight => "6ch-test-night",
        }
    }
}

/// One (train, test) cell of a table; `row` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridRow {
    pub table: Table,
    pub row: usize,
    pub train: TrainSet,
    pub test: TestSet,
}

impl GridRow {
    pub fn id(&self) -> String {
        format!("table{}-row{}", self.table.number(), self.row)
    }

    pub fn channels(&self) -> usize {
        self.train.channels()
    }
}

impl fmt::Display for GridRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.train.describe(), self.test.describe())
    }
}

/// Rows of one table in printed order.
pub fn table_rows(table: Table) -> Vec<GridRow> {
    use TestSet::*;
    use TrainSet::*;
    let cells: &[(TrainSet, TestSet)] = match table {
        Table::Table1 => &[
            (TrainDay, TestNight),
            (FakeTrainNight, TestNight),
            (TrainNight, TestNight),
            (TrainDayNight, TestNight),
        ],
        Table::Table2 => &[
            (SixTrainDay, SixTestNight),
            (SixTrainNight, SixTestNight),
            (SixTrainDayNight, SixTestNight),
        ],
        Table::Table3 => &[
            (TrainDay, TestDay),
            (TrainDay, FakeTestDay),
            (FakeTrainDay, FakeTestDay),
            (FakeTrainDay, TestDay),
            (TrainNight, TestNight),
            (TrainNight, FakeTestNight),
            (FakeTrainNight, FakeTestNight),
            (FakeTrainNight, TestNight),
        ],
    };
    cells
        .iter()
        .enumerate()
        .map(|(i, &(train, test))| GridRow {
            table,
            row: i + 1,
            train,
            test,
        })
        .collect()
}

pub fn grid_rows(grid: Grid) -> Vec<GridRow> {
    grid.tables().into_iter().flat_map(table_rows).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_grid_has_fifteen_distinct_rows() {
        let rows = grid_rows(Grid::All);
        assert_eq!(rows.len(), 15);
        let mut ids: Vec<String> = rows.iter().map(GridRow::id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 15);
        let mut cells: Vec<(TrainSet, TestSet)> = table_rows(Table::Table3).iter().map(|r| (r.train, r.test)).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 8);
    }

    #[test]
    fn six_channel_rows_use_six_channel_tests() {
        for r in grid_rows(Grid::All) {
            assert_eq!(r.train.channels(), r.test.channels(), "{r}");
        }
        assert!(table_rows(Table::Table2).iter().all(|r| r.channels() == 6));
    }
}
