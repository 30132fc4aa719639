//! TCP front end: one reader task and one writer task per connection.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio_util::codec::{FramedRead, FramedWrite};
use tracing::{debug, info, warn};

use smartfridge_wire::{Frame, FrameCodec};

use crate::core::{Action, Broker, BrokerConfig, Connection};
use crate::queue::OutboundQueue;

/// A broker accepting connections in the background.
pub struct BrokerHandle {
    addr: SocketAddr,
    broker: Arc<Broker>,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl BrokerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    /// Stops accepting and closes every connection.
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        let _ = self.task.await;
    }
}

/// Binds `addr` and serves until the handle is shut down.
pub async fn spawn(addr: impl tokio::net::ToSocketAddrs, config: BrokerConfig) -> io::Result<BrokerHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let broker = Arc::new(Broker::new(config));
    let (shutdown, rx) = watch::channel(false);
    let task = tokio::spawn(serve(listener, Arc::clone(&broker), rx));
    info!(%addr, "broker listening");
    Ok(BrokerHandle {
        addr,
        broker,
        shutdown,
        task,
    })
}

/// Accept loop. Returns once `shutdown` flips to true.
pub async fn serve(listener: TcpListener, broker: Arc<Broker>, mut shutdown: watch::Receiver<bool>) {
    let mut connections = tokio::task::JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    connections.spawn(handle_connection(
                        stream,
                        peer,
                        Arc::clone(&broker),
                        shutdown.clone(),
                    ));
                }
                Err(e) => warn!(error = %e, "accept failed"),
            },
            _ = shutdown.changed() => break,
            Some(_) = connections.join_next(), if !connections.is_empty() => {}
        }
    }
    while connections.join_next().await.is_some() {}
}

async fn handle_connection(
    stream: TcpStream,
    peer: SocketAddr,
    broker: Arc<Broker>,
    mut shutdown: watch::Receiver<bool>,
) {
    let _ = stream.set_nodelay(true);
    let keepalive = broker.config().keepalive;
    let (read_half, write_half) = stream.into_split();
    let mut frames = FramedRead::new(read_half, FrameCodec);
    let mut conn = Connection::new(broker);
    let writer = tokio::spawn(write_loop(
        Arc::clone(conn.queue()),
        FramedWrite::new(write_half, FrameCodec),
    ));
    debug!(%peer, "accepted");

    'read: loop {
        let next = async {
            match keepalive {
                Some(limit) => tokio::time::timeout(limit, frames.next()).await.ok(),
                None => Some(frames.next().await),
            }
        };
        let item = tokio::select! {
            item = next => item,
            _ = shutdown.changed() => break 'read,
        };
        let frame = match item {
            None => {
                info!(%peer, client_id = conn.client_id(), "keepalive expired");
                break;
            }
            Some(None) => break,
            Some(Some(Ok(frame))) => frame,
            Some(Some(Err(e))) => {
                warn!(%peer, client_id = conn.client_id(), error = %e, "closing on bad input");
                break;
            }
        };
        for action in conn.handle_frame(frame) {
            match action {
                Action::Reply(reply) => {
                    conn.queue().push(reply);
                }
                Action::Close => break 'read,
            }
        }
    }
    conn.teardown();
    let _ = writer.await;
}

async fn write_loop(
    queue: Arc<OutboundQueue>,
    mut sink: FramedWrite<tokio::net::tcp::OwnedWriteHalf, FrameCodec>,
) {
    while let Some(batch) = queue.next_batch().await {
        for frame in batch {
            if let Err(e) = sink.feed(frame).await {
                debug!(error = %e, "write failed");
                queue.close();
                return;
            }
        }
        if SinkExt::<Frame>::flush(&mut sink).await.is_err() {
            queue.close();
            return;
        }
    }
    let _ = SinkExt::<Frame>::close(&mut sink).await;
}
