use std::fmt::Write;

use super::SimResult;

pub const TRACE_CSV_HEADER: &str =
    "id,weight,arrival,enqueue,first_run,completion,exec,max_wait,total_wait,dispatches";

/// Flat per-task trace, one row per completed task, in task order.
pub fn trace_csv(result: &SimResult) -> String {
    let mut out = String::with_capacity(64 * (result.trace.len() + 1));
    out.push_str(TRACE_CSV_HEADER);
    out.push('\n');
    for t in &result.trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            t.id.0,
            t.weight,
            t.arrival,
            t.enqueue,
            t.first_run,
            t.completion,
            t.exec,
            t.max_wait,
            t.total_wait,
            t.dispatches
        );
    }
    out
}
