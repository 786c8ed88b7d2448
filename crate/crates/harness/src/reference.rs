//! Published mAPs, for orientation next to desk-scale numbers.

use crate::grid::{GridRow, Table};

/// `(table, row, mAP)` exactly as printed.
pub const PAPER_REFERENCE: [(Table, usize, f64); 15] = [
    (Table::Table1, 1, 0.777),
    (Table::Table1, 2, 0.893),
    (Table::Table1, 3, 0.933),
    (Table::Table1, 4, 0.941),
    (Table::Table2, 1, 0.830),
    (Table::Table2, 2, 0.931),
    (Table::Table2, 3, 0.938),
    (Table::Table3, 1, 0.945),
    (Table::Table3, 2, 0.789),
    (Table::Table3, 3, 0.914),
    (Table::Table3, 4, 0.903),
    (Table::Table3, 5, 0.932),
    (Table::Table3, 6, 0.859),
    (Table::Table3, 7, 0.924),
    (Table::Table3, 8, 0.868),
];

pub fn paper_reference(table: Table, row: usize) -> Option<f64> {
    PAPER_REFERENCE.iter().find(|(t, r, _)| *t == table && *r == row).map(|e| e.2)
}

pub fn reference_for(row: &GridRow) -> Option<f64> {
    paper_reference(row.table, row.row)
}
