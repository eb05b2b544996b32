use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::MetricsError;

/// Error of one evaluated frame, tagged with its grouping keys.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameError {
    pub subject: String,
    pub action: String,
    pub error_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub subject: String,
    pub action: String,
    pub frames: usize,
    pub mpjpe_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by subject, then action.
    pub rows: Vec<ReportRow>,
    /// Frame-weighted mean over all rows.
    pub overall_mm: f64,
    pub frames: usize,
}

/// Groups frames by `(subject, action)`; sums run in input order.
pub fn build_report(errors: &[FrameError]) -> Result<EvalReport, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let mut groups: BTreeMap<(&str, &str), (usize, f64)> = BTreeMap::new();
    let mut total = 0.0;
    for e in errors {
        let g = groups
            .entry((e.subject.as_str(), e.action.as_str()))
            .or_insert((0, 0.0));
        g.0 += 1;
        g.1 += e.error_mm;
        total += e.error_mm;
    }
    let rows = groups
        .into_iter()
        .map(|((subject, action), (frames, sum))| ReportRow {
            subject: subject.to_string(),
            action: action.to_string(),
            frames,
            mpjpe_mm: sum / frames as f64,
        })
        .collect();
    Ok(EvalReport {
        rows,
        overall_mm: total / errors.len() as f64,
        frames: errors.len(),
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("subject,action,frames,mpjpe_mm\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6}", r.subject, r.action, r.frames, r.mpjpe_mm);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let sw = self
            .rows
            .iter()
            .map(|r| r.subject.len())
            .chain(["subject".len(), "Average".len()])
            .max()
            .unwrap_or(0);
        let aw = self
            .rows
            .iter()
            .map(|r| r.action.len())
            .chain(["action".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:<sw$}  {:<aw$}  {:>8}  {:>10}", "subject", "action", "frames", "MPJPE (mm)");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<sw$}  {:<aw$}  {:>8}  {:>10.2}",
                r.subject, r.action, r.frames, r.mpjpe_mm
            );
        }
        let _ = writeln!(
            out,
            "{:<sw$}  {:<aw$}  {:>8}  {:>10.2}",
            "Average", "", self.frames, self.overall_mm
        );
        out
    }

    /// Mean over an action's rows for one subject, if present.
    pub fn cell(&self, subject: &str, action: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.subject == subject && r.action == action)
            .map(|r| r.mpjpe_mm)
    }
}

/// One row per method and a single "Average" column.
pub fn method_table(methods: &[(&str, &EvalReport)]) -> String {
    let mw = methods
        .iter()
        .map(|(m, _)| m.len())
        .chain(["Method".len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{:<mw$}  {:>8}", "Method", "Average");
    for (m, r) in methods {
        let _ = writeln!(out, "{:<mw$}  {:>8.2}", m, r.overall_mm);
    }
    out
}

/// One row per method, one column per subject for a single action, plus
/// the frame-weighted average over that action's rows.
pub fn subject_table(action: &str, methods: &[(&str, &EvalReport)]) -> String {
    let mut subjects: Vec<&str> = methods
        .iter()
        .flat_map(|(_, r)| r.rows.iter())
        .filter(|r| r.action == action)
        .map(|r| r.subject.as_str())
        .collect();
    subjects.sort_unstable();
    subjects.dedup();
    let mw = methods
        .iter()
        .map(|(m, _)| m.len())
        .chain(["Method".len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = write!(out, "{:<mw$}", "Method");
    for s in &subjects {
        let _ = write!(out, "  {:>8}", s);
    }
    let _ = writeln!(out, "  {:>8}", "Avg");
    for (m, r) in methods {
        let _ = write!(out, "{:<mw$}", m);
        let (mut frames, mut sum) = (0usize, 0.0);
        for s in &subjects {
            match r.rows.iter().find(|row| row.subject == *s && row.action == action) {
                Some(row) => {
                    frames += row.frames;
                    sum += row.mpjpe_mm * row.frames as f64;
                    let _ = write!(out, "  {:>8.2}", row.mpjpe_mm);
                }
                None => {
                    let _ = write!(out, "  {:>8}", "-");
                }
            }
        }
        if frames > 0 {
            let _ = writeln!(out, "  {:>8.2}", sum / frames as f64);
        } else {
            let _ = writeln!(out, "  {:>8}", "-");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fe(subject: &str, action: &str, e: f64) -> FrameError {
        FrameError {
            subject: subject.into(),
            action: action.into(),
            error_mm: e,
        }
    }

    #[test]
    fn singleton() {
        let r = build_report(&[fe("S1", "Walking", 5.0)]).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].mpjpe_mm, 5.0);
        assert_eq!(r.overall_mm, 5.0);
    }

    #[test]
    fn overall_is_frame_weighted() {
        let r = build_report(&[
            fe("S1", "Jog", 2.0),
            fe("S1", "Walk", 4.0),
            fe("S1", "Walk", 4.0),
            fe("S1", "Walk", 4.0),
        ])
        .unwrap();
        assert!((r.overall_mm - 3.5).abs() < 1e-12);
        let weighted: f64 = r.rows.iter().map(|x| x.mpjpe_mm * x.frames as f64).sum::<f64>()
            / r.frames as f64;
        assert!((weighted - r.overall_mm).abs() < 1e-9);
    }

    #[test]
    fn rows_sorted_and_csv() {
        let r = build_report(&[fe("S2", "b", 1.0), fe("S1", "z", 2.0), fe("S1", "a", 3.0)]).unwrap();
        let keys: Vec<_> = r.rows.iter().map(|x| (x.subject.as_str(), x.action.as_str())).collect();
        assert_eq!(keys, vec![("S1", "a"), ("S1", "z"), ("S2", "b")]);
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("subject,action,frames,mpjpe_mm"));
        assert_eq!(lines.next(), Some("S1,a,1,3.000000"));
        assert!(r.to_text().contains("Average"));
        assert_eq!(r.cell("S2", "b"), Some(1.0));
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(build_report(&[]), Err(MetricsError::EmptyEvaluation));
    }

    #[test]
    fn tables() {
        let a = build_report(&[fe("S1", "Walking", 20.0), fe("S2", "Walking", 30.0)]).unwrap();
        let b = build_report(&[fe("S1", "Walking", 10.0)]).unwrap();
        let t = method_table(&[("baseline", &a), ("boxed", &b)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].ends_with("Average"));
        assert!(lines[1].ends_with("25.00"));
        let t = subject_table("Walking", &[("baseline", &a), ("boxed", &b)]);
        assert!(t.lines().next().unwrap().contains("S2"));
        assert!(t.lines().nth(2).unwrap().contains('-'));
    }
}
