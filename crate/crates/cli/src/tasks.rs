//! Work-stealing task execution with per-task failure isolation and a
//! reproducibility manifest.

use mixselect::error::Result;
use serde::{Deserialize, Serialize};
use std::panic::AssertUnwindSafe;
use std::sync::Mutex;
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum TaskStatus {
    Ok { wall_ms: u64 },
    Skipped,
    Failed { message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskEntry {
    pub id: String,
    pub seed_stream: u64,
    #[serde(flatten)]
    pub status: TaskStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub tasks: Vec<TaskEntry>,
}

impl Manifest {
    pub fn new(config_hash: &str, master_seed: u64) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            master_seed,
            tasks: Vec::new(),
        }
    }

    pub fn failed(&self) -> usize {
        self.tasks
            .iter()
            .filter(|t| matches!(t.status, TaskStatus::Failed { .. }))
            .count()
    }

    pub fn load(path: &std::path::Path) -> Option<Manifest> {
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::outputs::write_atomic(path, &serde_json::to_string_pretty(self)?)
    }
}

pub struct TaskSpec<T> {
    pub id: String,
    pub seed_stream: u64,
    pub payload: T,
}

/// Run independent tasks on a dedicated pool. Panics and errors are
/// contained per task; completed siblings are unaffected. Entries come
/// back in submission order regardless of scheduling.
pub fn run_tasks<T, F>(tasks: Vec<TaskSpec<T>>, workers: usize, runner: F) -> Vec<TaskEntry>
where
    T: Send + Sync,
    F: Fn(&T) -> Result<bool> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(if workers == 0 { 0 } else { workers })
        .build()
        .expect("worker pool");
    let results: Mutex<Vec<Option<TaskEntry>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    pool.scope(|scope| {
        for (index, task) in tasks.iter().enumerate() {
            let results = &results;
            let runner = &runner;
            scope.spawn(move |_| {
                let start = Instant::now();
                let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| runner(&task.payload)));
                let status = match outcome {
                    Ok(Ok(true)) => TaskStatus::Ok {
                        wall_ms: start.elapsed().as_millis() as u64,
                    },
                    Ok(Ok(false)) => TaskStatus::Skipped,
                    Ok(Err(e)) => TaskStatus::Failed { message: e.to_string() },
                    Err(panic) => {
                        let message = panic
                            .downcast_ref::<&str>()
                            .map(|s| s.to_string())
                            .or_else(|| panic.downcast_ref::<String>().cloned())
                            .unwrap_or_else(|| "task panicked".into());
                        TaskStatus::Failed { message }
                    }
                };
                results.lock().unwrap()[index] = Some(TaskEntry {
                    id: task.id.clone(),
                    seed_stream: task.seed_stream,
                    status,
                });
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|e| e.expect("every task reports"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use mixselect::error::Error;

    #[test]
    fn empty_task_list_gives_empty_manifest() {
        let entries = run_tasks(Vec::<TaskSpec<u64>>::new(), 2, |_| Ok(true));
        assert!(entries.is_empty());
        let manifest = Manifest::new("h", 42);
        assert_eq!(manifest.failed(), 0);
    }

    #[test]
    fn failures_are_isolated() {
        let tasks: Vec<TaskSpec<u64>> = (0..10)
            .map(|i| TaskSpec {
                id: format!("t{i}"),
                seed_stream: i,
                payload: i,
            })
            .collect();
        let entries = run_tasks(tasks, 4, |&i| {
            if i == 3 {
                Err(Error::Numeric("deliberate".into()))
            } else if i == 7 {
                panic!("deliberate panic");
            } else {
                Ok(true)
            }
        });
        assert_eq!(entries.len(), 10);
        let failed: Vec<&TaskEntry> = entries
            .iter()
            .filter(|e| matches!(e.status, TaskStatus::Failed { .. }))
            .collect();
        assert_eq!(failed.len(), 2);
        assert_eq!(failed[0].id, "t3");
        assert_eq!(failed[1].id, "t7");
        assert!(entries
            .iter()
            .filter(|e| matches!(e.status, TaskStatus::Ok { .. }))
            .count()
            == 8);
    }

    #[test]
    fn worker_count_does_not_change_entry_order() {
        let mk = || -> Vec<TaskSpec<u64>> {
            (0..20)
                .map(|i| TaskSpec {
                    id: format!("t{i}"),
                    seed_stream: i,
                    payload: i,
                })
                .collect()
        };
        let a = run_tasks(mk(), 1, |_| Ok(true));
        let b = run_tasks(mk(), 8, |_| Ok(true));
        let ids = |v: &[TaskEntry]| v.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
    }
}
