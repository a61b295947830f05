//! Plain-text `key=value` rendering of evaluation reports.

use std::fmt::Write;

use nnscene_core::metrics::EvalReport;
use nnscene_core::Task;

/// One `key=value` pair per line. Absent per-class IoUs (class never seen
/// in either map) print as `nan`.
pub fn render(report: &EvalReport) -> String {
    let mut s = String::new();
    match report.task {
        Task::Segmentation { num_classes } => {
            let _ = writeln!(s, "task=segmentation");
            let _ = writeln!(s, "num_classes={num_classes}");
            if let Some(m) = report.miou {
                let _ = writeln!(s, "miou={m:.6}");
            }
            for (c, iou) in report.per_class_iou.iter().enumerate() {
                match iou {
                    Some(v) => writeln!(s, "iou_{c}={v:.6}"),
                    None => writeln!(s, "iou_{c}=nan"),
                }
                .unwrap();
            }
        }
        Task::Depth => {
            let _ = writeln!(s, "task=depth");
            if let Some(r) = report.rmse {
                let _ = writeln!(s, "rmse={r:.6}");
            }
        }
    }
    let _ = writeln!(s, "pixels_used={}", report.pixels_used);
    let _ = writeln!(s, "pixels_ignored={}", report.pixels_ignored);
    s
}
