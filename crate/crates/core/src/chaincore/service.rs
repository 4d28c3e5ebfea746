//! Serialized access to a [`Node`]: one thread owns it and applies commands in
//! arrival order, publishing an immutable state snapshot after each mutation.

use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;

use super::block::Block;
use super::mempool::MempoolError;
use super::node::{Accepted, Node, RejectReason};
use super::state::ChainState;
use super::tx::Transaction;
use crate::codec::Hash256;

type Job = Box<dyn FnOnce(&mut Node, &dyn Fn(&Node)) + Send>;

enum Command {
    SubmitBlock(Block, Sender<Result<Accepted, RejectReason>>),
    SubmitTx(Transaction, Sender<Result<Hash256, MempoolError>>),
    Template(super::keys::Address, usize, Sender<Block>),
    With(Job),
}

#[derive(Clone)]
pub struct ChainService {
    commands: Sender<Command>,
    snapshot: Arc<RwLock<Arc<ChainState>>>,
}

pub struct ServiceThread(JoinHandle<Node>);

impl ServiceThread {
    /// Waits for every [`ChainService`] handle to drop and returns the node.
    pub fn join(self) -> Node {
        self.0.join().expect("chain service thread panicked")
    }
}

impl ChainService {
    pub fn spawn(node: Node) -> (ChainService, ServiceThread) {
        let (tx, rx) = mpsc::channel::<Command>();
        let snapshot = Arc::new(RwLock::new(Arc::new(node.state().clone())));
        let published = snapshot.clone();
        let handle = std::thread::spawn(move || {
            let mut node = node;
            let publish = |node: &Node| *published.write().expect("snapshot lock") = Arc::new(node.state().clone());
            // snapshots are published before replying so a caller never
            // observes its own write missing
            for cmd in rx {
                match cmd {
                    Command::SubmitBlock(b, reply) => {
                        let r = node.submit_block(b);
                        if r.is_ok() {
                            publish(&node);
                        }
                        let _ = reply.send(r);
                    }
                    Command::SubmitTx(t, reply) => {
                        let _ = reply.send(node.submit_transaction(t));
                    }
                    Command::Template(addr, max, reply) => {
                        let ts = (node.height() + 1) * 600;
                        let _ = reply.send(node.assemble_block(addr, max, ts));
                    }
                    Command::With(f) => f(&mut node, &publish),
                }
            }
            node
        });
        (ChainService { commands: tx, snapshot }, ServiceThread(handle))
    }

    /// The state as of the last applied command. Cheap; safe from any thread.
    pub fn snapshot(&self) -> Arc<ChainState> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn submit_block(&self, block: Block) -> Result<Accepted, RejectReason> {
        let (tx, rx) = mpsc::channel();
        self.commands.send(Command::SubmitBlock(block, tx)).expect("service alive");
        rx.recv().expect("service alive")
    }

    pub fn submit_transaction(&self, t: Transaction) -> Result<Hash256, MempoolError> {
        let (tx, rx) = mpsc::channel();
        self.commands.send(Command::SubmitTx(t, tx)).expect("service alive");
        rx.recv().expect("service alive")
    }

    pub fn block_template(&self, coinbase: super::keys::Address, max_txs: usize) -> Block {
        let (tx, rx) = mpsc::channel();
        self.commands.send(Command::Template(coinbase, max_txs, tx)).expect("service alive");
        rx.recv().expect("service alive")
    }

    /// Runs `f` on the service thread with exclusive access to the node.
    pub fn with<R: Send + 'static>(&self, f: impl FnOnce(&mut Node) -> R + Send + 'static) -> R {
        let (tx, rx) = mpsc::channel();
        self.commands
            .send(Command::With(Box::new(move |n, publish| {
                let r = f(n);
                publish(n);
                let _ = tx.send(r);
            })))
            .expect("service alive");
        rx.recv().expect("service alive")
    }
}
