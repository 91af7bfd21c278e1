//! Spreadsheet inspection engine: workbook model, formula language,
//! recalculation, static inspections, test scenarios, validation rules and
//! the live inspection scheduler.

pub mod address;
pub mod calc;
pub mod edit;
pub mod engine;
pub mod findings;
pub mod formula;
pub mod grid;
pub mod guardian;
pub mod inspect;
pub mod io;
pub mod scenario;
pub mod validation;
