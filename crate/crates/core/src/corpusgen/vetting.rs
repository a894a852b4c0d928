use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Result, TextCorpus};

/// One sentence to be fact-checked by a person. `correct` is left blank for
/// the annotator (`1`, `0` or `not sure` by convention).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VettingRow {
    pub class: String,
    pub text: String,
    pub correct: String,
}

pub fn export_vetting_sheet(corpus: &TextCorpus, classes: &[String]) -> Result<Vec<VettingRow>> {
    let mut rows = Vec::new();
    for class in classes {
        let records = corpus
            .records(class)
            .ok_or_else(|| CorpusError::UnknownClass(class.clone()))?;
        rows.extend(records.iter().map(|r| VettingRow {
            class: class.clone(),
            text: r.text.clone(),
            correct: String::new(),
        }));
    }
    Ok(rows)
}

/// CSV with header `class,text,correct`.
pub fn write_vetting_csv<W: Write>(rows: &[VettingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "text", "correct"])?;
    for r in rows {
        w.write_record([&r.class, &r.text, &r.correct])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vetting_csv<R: Read>(input: R) -> Result<Vec<VettingRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<VettingRow>, _>>()?;
    Ok(rows)
}
