//! Two-worker execution of the distillation loop.
//!
//! Worker-G selects views, asks for init renderings and runs the generator.
//! Worker-T owns the state: it services render requests between training
//! steps, applies dataset updates in queue order and trains. They share
//! nothing but the `render_requests` and `dataset_updates` queues (plus a
//! write-only event log), and the final state equals a sequential run.

use std::time::Duration;

use crossbeam_channel::{bounded, select, unbounded, Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};

use super::schedule::annealing_strength;
use super::state::Role;
use super::{DistillError, DistillationState, GenerationKey, Generator, Image, MigrationKind, SceneRepresentation};
use crate::render::BoundingBoxImage;

#[derive(Debug, Clone, Copy)]
pub struct TwoWorkerOptions {
    /// Longest either worker may wait on a queue.
    pub timeout: Duration,
}

impl Default for TwoWorkerOptions {
    fn default() -> Self {
        TwoWorkerOptions {
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Worker {
    G,
    T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    RenderRequest,
    Render,
    Generate,
    Update,
    Train { role: Role, frozen: bool },
    Migration { migration: MigrationKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: usize,
    pub worker: Worker,
    pub iter: usize,
    pub view: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

struct RenderRequest {
    iter: usize,
    view: usize,
    reply: Sender<Image>,
}

struct DatasetUpdate {
    iter: usize,
    view: usize,
    image: Image,
    strength: f64,
}

type LogTx = Sender<(Worker, usize, usize, EventKind)>;

fn recv<T>(rx: &Receiver<T>, timeout: Duration, queue: &'static str) -> Result<T, DistillError> {
    match rx.recv_timeout(timeout) {
        Ok(v) => Ok(v),
        Err(RecvTimeoutError::Timeout) => Err(DistillError::DeadlockTimeout(queue)),
        Err(RecvTimeoutError::Disconnected) => Err(DistillError::Worker(format!("{queue} closed"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn worker_g(
    gen: &dyn Generator,
    bbis: &[BoundingBoxImage],
    mut epochs: Vec<u64>,
    prompt: &str,
    schedule: super::AnnealingSchedule,
    start: usize,
    end: usize,
    opts: TwoWorkerOptions,
    requests: Sender<RenderRequest>,
    updates: Sender<DatasetUpdate>,
    log: LogTx,
) -> Result<(), DistillError> {
    let select_view = |epochs: &[u64]| (0..epochs.len()).min_by_key(|&i| (epochs[i], i)).expect("views");
    let post = |iter: usize, epochs: &mut Vec<u64>| -> Result<(usize, u64, Receiver<Image>), DistillError> {
        let view = select_view(epochs);
        epochs[view] += 1;
        let epoch = epochs[view];
        let (tx, rx) = bounded(1);
        let _ = log.send((Worker::G, iter, view, EventKind::RenderRequest));
        requests
            .send(RenderRequest { iter, view, reply: tx })
            .map_err(|_| DistillError::Worker("render-requests closed".into()))?;
        Ok((view, epoch, rx))
    };
    let mut pending = Some(post(start, &mut epochs)?);
    for iter in start..end {
        let (view, epoch, reply) = pending.take().expect("request posted");
        let init = recv(&reply, opts.timeout, "render reply")?;
        // Ask for the next rendering before generating; Worker-T decides
        // whether it can be served early.
        if iter + 1 < end {
            pending = Some(post(iter + 1, &mut epochs)?);
        }
        let strength = annealing_strength(iter, &schedule);
        let key = GenerationKey { view, epoch };
        let image = gen.generate(&bbis[view], prompt, &init, strength, key)?;
        let _ = log.send((Worker::G, iter, view, EventKind::Generate));
        updates
            .send(DatasetUpdate {
                iter,
                view,
                image,
                strength,
            })
            .map_err(|_| DistillError::Worker("dataset-updates closed".into()))?;
    }
    Ok(())
}

fn worker_t<R: SceneRepresentation>(
    state: &mut DistillationState<R>,
    end: usize,
    opts: TwoWorkerOptions,
    requests: Receiver<RenderRequest>,
    updates: Receiver<DatasetUpdate>,
    log: LogTx,
) -> Result<(), DistillError> {
    let serve = |state: &DistillationState<R>, req: RenderRequest| {
        let img = state.render_init(req.view);
        let _ = log.send((Worker::T, req.iter, req.view, EventKind::Render));
        let _ = req.reply.send(img);
    };
    let mut early: Option<usize> = None;
    while state.iter < end {
        let iter = state.iter;
        if early != Some(iter) {
            let req = recv(&requests, opts.timeout, "render-requests")?;
            if req.iter != iter {
                return Err(DistillError::Worker(format!("request for {} at {}", req.iter, iter)));
            }
            serve(state, req);
        }
        // Wait for this step's update; a request for the next step may be
        // served meanwhile when the render source cannot change.
        let mut held: Option<RenderRequest> = None;
        let mut requests_open = true;
        let upd = loop {
            if requests_open && held.is_none() && early != Some(iter + 1) {
                select! {
                    recv(updates) -> msg => break msg.map_err(|_| DistillError::Worker("dataset-updates closed".into()))?,
                    recv(requests) -> msg => {
                        let Ok(req) = msg else {
                            requests_open = false;
                            continue;
                        };
                        if req.iter != iter + 1 {
                            return Err(DistillError::Worker(format!("request for {} at {}", req.iter, iter)));
                        }
                        if state.next_render_is_stable() {
                            serve(state, req);
                            early = Some(iter + 1);
                        } else {
                            held = Some(req);
                        }
                    },
                    default(opts.timeout) => return Err(DistillError::DeadlockTimeout("dataset-updates")),
                }
            } else {
                break recv(&updates, opts.timeout, "dataset-updates")?;
            }
        };
        if upd.iter != iter {
            return Err(DistillError::Worker(format!("update for {} at {}", upd.iter, iter)));
        }
        state.apply_update(upd.view, upd.image, upd.strength);
        let _ = log.send((Worker::T, iter, upd.view, EventKind::Update));
        let coarse_frozen = state.c_frozen;
        let out = state.train_and_advance(upd.view)?;
        let _ = log.send((
            Worker::T,
            iter,
            upd.view,
            EventKind::Train {
                role: out.trained,
                frozen: out.trained == Role::Coarse && coarse_frozen,
            },
        ));
        for m in out.migrations {
            let _ = log.send((Worker::T, iter, upd.view, EventKind::Migration { migration: m.kind }));
        }
        if let Some(req) = held {
            serve(state, req);
            early = Some(iter + 1);
        }
    }
    Ok(())
}

/// Runs `iters` steps with the generation and training roles on separate
/// threads. Returns the final state and the event log.
pub fn run_two_worker<R: SceneRepresentation>(
    mut state: DistillationState<R>,
    gen: &dyn Generator,
    iters: usize,
    opts: TwoWorkerOptions,
) -> Result<(DistillationState<R>, Vec<Event>), DistillError> {
    if iters == 0 {
        return Ok((state, Vec::new()));
    }
    let start = state.iter;
    let end = start + iters;
    let bbis: Vec<BoundingBoxImage> = state.dataset.iter().map(|v| v.bbi.clone()).collect();
    let epochs: Vec<u64> = state.dataset.iter().map(|v| v.generation_epoch).collect();
    let prompt = state.config.prompt.clone();
    let schedule = state.config.schedule();
    let (req_tx, req_rx) = unbounded();
    let (upd_tx, upd_rx) = unbounded();
    let (log_tx, log_rx) = unbounded();

    let (g_res, t_res) = std::thread::scope(|s| {
        let log_g = log_tx.clone();
        let g = s.spawn(move || {
            worker_g(
                gen, &bbis, epochs, &prompt, schedule, start, end, opts, req_tx, upd_tx, log_g,
            )
        });
        let st = &mut state;
        let log_t = log_tx;
        let t = s.spawn(move || worker_t(st, end, opts, req_rx, upd_rx, log_t));
        let t_res = t
            .join()
            .unwrap_or_else(|_| Err(DistillError::Worker("Worker-T panicked".into())));
        let g_res = g
            .join()
            .unwrap_or_else(|_| Err(DistillError::Worker("Worker-G panicked".into())));
        (g_res, t_res)
    });
    // A worker that fails closes its queues; report the original cause.
    match (g_res, t_res) {
        (Ok(()), Ok(())) => {}
        (Err(e), Err(DistillError::Worker(_))) | (Err(e), Ok(())) => return Err(e),
        (_, Err(e)) => return Err(e),
    }
    let events = log_rx
        .try_iter()
        .enumerate()
        .map(|(seq, (worker, iter, view, kind))| Event {
            seq,
            worker,
            iter,
            view,
            kind,
        })
        .collect();
    Ok((state, events))
}

/// Checks the ordering contract of an event log covering iterations
/// `start..start + iters`.
pub fn verify_event_log(events: &[Event], start: usize, iters: usize) -> Result<(), String> {
    let rank = |k: &EventKind| match k {
        EventKind::RenderRequest => Some(0),
        EventKind::Render => Some(1),
        EventKind::Generate => Some(2),
        EventKind::Update => Some(3),
        EventKind::Train { .. } => Some(4),
        EventKind::Migration { .. } => None,
    };
    let mut pos = vec![[usize::MAX; 5]; iters];
    for (i, e) in events.iter().enumerate() {
        if let EventKind::Train { frozen: true, .. } = e.kind {
            return Err(format!("train_step on frozen S_c at iter {}", e.iter));
        }
        let Some(r) = rank(&e.kind) else { continue };
        let Some(slot) = e.iter.checked_sub(start).filter(|&k| k < iters) else {
            return Err(format!("event for iter {} outside run", e.iter));
        };
        if pos[slot][r] != usize::MAX {
            return Err(format!("duplicate {:?} at iter {}", e.kind, e.iter));
        }
        pos[slot][r] = i;
    }
    for (k, p) in pos.iter().enumerate() {
        if p.contains(&usize::MAX) {
            return Err(format!("iter {} missing an event", start + k));
        }
        if !p.windows(2).all(|w| w[0] < w[1]) {
            return Err(format!("iter {} out of order", start + k));
        }
    }
    // Updates are applied in queue order and each is trained on before the
    // next update lands.
    let writes: Vec<&Event> = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Update | EventKind::Train { .. }))
        .collect();
    for (i, e) in writes.iter().enumerate() {
        let expect_update = i % 2 == 0;
        let it = start + i / 2;
        let ok = e.iter == it && matches!(e.kind, EventKind::Update) == expect_update;
        if !ok {
            return Err(format!("update/train alternation broken at event {}", e.seq));
        }
        if !expect_update && e.view != writes[i - 1].view {
            return Err(format!("iter {} trained a different view than it updated", e.iter));
        }
    }
    Ok(())
}
