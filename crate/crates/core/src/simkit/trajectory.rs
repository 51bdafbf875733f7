//! Trajectory CSV files and a minimal SVG plot.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::detector::AttackType;
use crate::supervisor::{ControlMode, Role};

use super::run::{TrajectoryLog, TrajectoryRecord};
use super::SimError;

pub const CSV_COLUMNS: [&str; 17] = [
    "step", "time_s", "robot", "x", "y", "xhat_x", "xhat_y", "y_recv_x", "y_recv_y", "res_norm", "s_dec",
    "s_dos", "mode", "alarm", "u_x", "u_y", "phi",
];

/// Nine significant digits.
fn float(v: f64) -> String {
    format!("{v:.8e}")
}

fn alarm_label(a: Option<AttackType>) -> &'static str {
    a.map_or("none", AttackType::label)
}

fn record_fields(r: &TrajectoryRecord) -> [String; 17] {
    [
        r.step.to_string(),
        float(r.time_s),
        r.robot.to_string(),
        float(r.x[0]),
        float(r.x[1]),
        float(r.x_hat[0]),
        float(r.x_hat[1]),
        float(r.y_recv[0]),
        float(r.y_recv[1]),
        float(r.res_norm),
        float(r.s_dec),
        float(r.s_dos),
        r.mode.label().to_string(),
        alarm_label(r.alarm).to_string(),
        float(r.u[0]),
        float(r.u[1]),
        float(r.phi),
    ]
}

/// Writes the records to any sink, header first, LF line endings.
pub fn write_records<W: Write>(records: &[TrajectoryRecord], sink: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record(record_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(log: &TrajectoryLog, path: &Path) -> Result<(), SimError> {
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    write_records(&log.records, BufWriter::new(file)).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => SimError::io(path, io),
        other => SimError::Csv {
            line: 0,
            msg: format!("{other:?}"),
        },
    })
}

/// Parses trajectory CSV text back into records.
pub fn parse_records<R: Read>(source: R) -> Result<Vec<TrajectoryRecord>, SimError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = reader.headers().map_err(|e| SimError::Csv {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(SimError::Csv {
            line: 1,
            msg: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| SimError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |msg: String| SimError::Csv { line, msg };
        if row.len() != CSV_COLUMNS.len() {
            return Err(bad(format!(
                "expected {} fields, got {}",
                CSV_COLUMNS.len(),
                row.len()
            )));
        }
        let num = |idx: usize| -> Result<f64, SimError> {
            row[idx]
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", CSV_COLUMNS[idx])))
        };
        let int = |idx: usize| -> Result<u64, SimError> {
            row[idx]
                .parse::<u64>()
                .map_err(|e| bad(format!("column {}: {e}", CSV_COLUMNS[idx])))
        };
        let mode = ControlMode::parse(&row[12]).ok_or_else(|| bad(format!("unknown mode `{}`", &row[12])))?;
        let alarm = match &row[13] {
            "none" => None,
            "deception" => Some(AttackType::Deception),
            "dos" => Some(AttackType::Dos),
            other => return Err(bad(format!("unknown alarm `{other}`"))),
        };
        let robot = usize::try_from(int(2)?).map_err(|e| bad(e.to_string()))?;
        out.push(TrajectoryRecord {
            step: int(0)?,
            time_s: num(1)?,
            robot,
            x: [num(3)?, num(4)?],
            x_hat: [num(5)?, num(6)?],
            y_recv: [num(7)?, num(8)?],
            res_norm: num(9)?,
            s_dec: num(10)?,
            s_dos: num(11)?,
            mode,
            alarm,
            u: [num(14)?, num(15)?],
            phi: num(16)?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<TrajectoryRecord>, SimError> {
    let file = File::open(path).map_err(|e| SimError::io(path, e))?;
    parse_records(file)
}

fn mode_color(m: ControlMode) -> &'static str {
    match m {
        ControlMode::Baseline => "#4c72b0",
        ControlMode::WeightedBearing => "#dd8452",
        ControlMode::LeaderFollower {
            role: Role::Leader, ..
        } => "#55a868",
        ControlMode::LeaderFollower {
            role: Role::Follower, ..
        } => "#c44e52",
    }
}

/// Robot paths over the arena, one polyline per stretch of constant mode.
pub fn render_svg(log: &TrajectoryLog, arena: [f64; 2]) -> String {
    const WIDTH: f64 = 800.0;
    let margin = 0.1;
    let span_x = arena[0] + 2.0 * margin;
    let span_y = arena[1] + 2.0 * margin;
    let scale = WIDTH / span_x;
    let height = span_y * scale;
    let px = |p: [f64; 2]| ((p[0] + span_x / 2.0) * scale, (span_y / 2.0 - p[1]) * scale);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}">"#
    );
    let (ax, ay) = px([-arena[0] / 2.0, arena[1] / 2.0]);
    let _ = writeln!(
        svg,
        r##"<rect x="{ax:.1}" y="{ay:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##,
        arena[0] * scale,
        arena[1] * scale
    );
    let n = log.summary.n_robots;
    for robot in 0..n {
        let path: Vec<&TrajectoryRecord> = log.records.iter().filter(|r| r.robot == robot).collect();
        let mut start = 0;
        while start < path.len() {
            let mode = path[start].mode;
            let mut end = start;
            while end + 1 < path.len() && path[end + 1].mode == mode {
                end += 1;
            }
            // Overlap by one point so segments join.
            let stop = (end + 1).min(path.len() - 1);
            let points: Vec<String> = path[start..=stop]
                .iter()
                .map(|r| {
                    let (x, y) = px(r.x);
                    format!("{x:.1},{y:.1}")
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                mode_color(mode),
                points.join(" ")
            );
            start = end + 1;
        }
        if let Some(last) = path.last() {
            let (x, y) = px(last.x);
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="{}"/>"#,
                mode_color(last.mode)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
                x + 5.0,
                y - 5.0,
                robot + 1
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
