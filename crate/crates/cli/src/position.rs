//! `maskbond position <file>`.
//!
//! The file is CSV with one row per anchor. Either give the measured
//! distance in metres:
//!
//! ```text
//! anchor_x,anchor_y,distance
//! ```
//!
//! or the six two-way-ranging timestamps in seconds, initiator clock for
//! `t_sp,t_rr,t_sf` and responder clock for `t_rp,t_sr,t_rf`:
//!
//! ```text
//! anchor_x,anchor_y,t_sp,t_rp,t_sr,t_rr,t_sf,t_rf
//! ```

use std::path::Path;

use maskbond::positioning::{distance, multilaterate, time_of_flight, Anchor, TwrTimestamps};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Deserialize)]
struct Row {
    anchor_x: f64,
    anchor_y: f64,
    distance: Option<f64>,
    t_sp: Option<f64>,
    t_rp: Option<f64>,
    t_sr: Option<f64>,
    t_rr: Option<f64>,
    t_sf: Option<f64>,
    t_rf: Option<f64>,
}

#[derive(Serialize)]
struct Output {
    x: f64,
    y: f64,
    rms_residual: f64,
    iterations: u32,
    distances: Vec<f64>,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Failure {
    Failure { code: 2, message: format!("line {line}: {msg}") }
}

fn row_distance(row: &Row, line: usize) -> Result<f64, Failure> {
    if let Some(d) = row.distance {
        return Ok(d);
    }
    let ts = [row.t_sp, row.t_rp, row.t_sr, row.t_rr, row.t_sf, row.t_rf];
    let Some(ts) = ts.into_iter().collect::<Option<Vec<f64>>>() else {
        return Err(bad(line, "need either distance or all six timestamps"));
    };
    let ts = TwrTimestamps::from_seconds(ts.try_into().expect("six values"));
    time_of_flight(&ts).and_then(distance).map_err(|e| bad(line, e))
}

pub(crate) fn run(path: &Path) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure { code: 4, message: format!("{}: {e}", path.display()) };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let (mut anchors, mut distances) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| bad(line, e))?;
        distances.push(row_distance(&row, line)?);
        anchors.push(Anchor { id: i as u32, position: [row.anchor_x, row.anchor_y] });
    }
    let fix = multilaterate(&anchors, &distances)
        .map_err(|e| Failure { code: 2, message: format!("{}: no fix: {e}", path.display()) })?;
    let out = Output {
        x: fix.position[0],
        y: fix.position[1],
        rms_residual: fix.rms_residual,
        iterations: fix.iterations,
        distances,
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("output serializes"));
    Ok(())
}
