use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use tokio::sync::{mpsc, Notify};
use tokio::task::JoinHandle;

use super::{EvolutionReport, Evolver};
use crate::llm::ChatMessage;

type Callback = Box<dyn FnOnce(EvolutionReport) + Send>;

/// One queued evolution run. `on_done` receives the report.
pub struct EvolutionJob {
    pub user_id: String,
    pub messages: Vec<ChatMessage>,
    pub on_done: Option<Callback>,
}

struct Worker {
    tx: mpsc::UnboundedSender<EvolutionJob>,
    handle: JoinHandle<()>,
}

/// Background evolution with one FIFO worker per user: jobs for a user run
/// in submission order, one at a time, and never block the caller.
pub struct EvolutionScheduler {
    evolver: Arc<Evolver>,
    workers: Mutex<HashMap<String, Worker>>,
    pending: Arc<AtomicUsize>,
    idle: Arc<Notify>,
}

impl EvolutionScheduler {
    pub fn new(evolver: Arc<Evolver>) -> Self {
        Self {
            evolver,
            workers: Mutex::default(),
            pending: Arc::new(AtomicUsize::new(0)),
            idle: Arc::new(Notify::new()),
        }
    }

    pub fn evolver(&self) -> &Arc<Evolver> {
        &self.evolver
    }

    pub fn pending(&self) -> usize {
        self.pending.load(Ordering::SeqCst)
    }

    /// Queue a job. Must be called from within a tokio runtime.
    pub fn schedule(&self, job: EvolutionJob) {
        self.pending.fetch_add(1, Ordering::SeqCst);
        let mut workers = self.workers.lock().expect("workers poisoned");
        let worker = workers
            .entry(job.user_id.clone())
            .or_insert_with(|| self.spawn_worker());
        if let Err(mpsc::error::SendError(job)) = worker.tx.send(job) {
            // The worker is gone; start a fresh one for this user.
            let fresh = self.spawn_worker();
            if fresh.tx.send(job).is_err() {
                unreachable!("fresh worker accepts jobs");
            }
            *worker = fresh;
        }
    }

    fn spawn_worker(&self) -> Worker {
        let (tx, mut rx) = mpsc::unbounded_channel::<EvolutionJob>();
        let evolver = self.evolver.clone();
        let pending = self.pending.clone();
        let idle = self.idle.clone();
        let handle = tokio::spawn(async move {
            while let Some(job) = rx.recv().await {
                let report = evolver.evolve_turn(&job.user_id, &job.messages).await;
                if let Some(on_done) = job.on_done {
                    on_done(report);
                }
                if pending.fetch_sub(1, Ordering::SeqCst) == 1 {
                    idle.notify_waiters();
                }
            }
        });
        Worker { tx, handle }
    }

    /// Wait until every queued job has finished.
    pub async fn wait_idle(&self) {
        loop {
            let notified = self.idle.notified();
            if self.pending() == 0 {
                return;
            }
            notified.await;
        }
    }

    /// Stop accepting work on the current workers and wait for everything
    /// already queued to complete. Later `schedule` calls start new workers.
    pub async fn flush(&self) {
        let workers: Vec<Worker> = self
            .workers
            .lock()
            .expect("workers poisoned")
            .drain()
            .map(|(_, w)| w)
            .collect();
        for worker in workers {
            drop(worker.tx);
            if let Err(e) = worker.handle.await {
                tracing::error!(error = %e, "evolution worker panicked");
            }
        }
    }
}
