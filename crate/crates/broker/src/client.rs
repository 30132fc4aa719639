//! Async client used by devices, the backend and tests.

use std::io;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use futures::{SinkExt, StreamExt};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, Mutex};
use tokio::task::JoinHandle;
use tokio_util::codec::{FramedRead, FramedWrite};

use smartfridge_wire::{CodecError, ConnAckCode, Frame, FrameCodec, TopicError, TopicFilter, TopicName, SUBACK_GRANTED};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("connection failed: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error("connection refused by broker: {0:?}")]
    Refused(ConnAckCode),
    #[error("subscription refused with code {0:#04x}")]
    SubscribeRefused(u8),
    #[error("unexpected {0:?} from broker")]
    Unexpected(smartfridge_wire::FrameKind),
    #[error("connection closed")]
    Closed,
}

/// A PUBLISH received on a subscribed filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: TopicName,
    pub body: Bytes,
}

type Sink = FramedWrite<OwnedWriteHalf, FrameCodec>;

/// Cloneable sending half of a client; safe to share across tasks.
#[derive(Clone)]
pub struct Publisher {
    sink: Arc<Mutex<Sink>>,
}

impl Publisher {
    pub async fn publish(&self, topic: &TopicName, body: impl Into<Bytes>) -> Result<(), ClientError> {
        self.send(Frame::publish(topic.clone(), body)).await
    }

    async fn send(&self, frame: Frame) -> Result<(), ClientError> {
        let mut sink = self.sink.lock().await;
        sink.send(frame).await?;
        Ok(())
    }
}

pub struct Client {
    client_id: String,
    publisher: Publisher,
    messages: mpsc::UnboundedReceiver<Message>,
    control: mpsc::UnboundedReceiver<Frame>,
    auto_pings: Arc<AtomicUsize>,
    reader: JoinHandle<()>,
    pinger: Option<JoinHandle<()>>,
}

impl Client {
    /// Opens a session and waits for CONNACK.
    pub async fn connect(addr: impl ToSocketAddrs, client_id: &str) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (read_half, write_half) = stream.into_split();
        let mut frames = FramedRead::new(read_half, FrameCodec);
        let mut sink = FramedWrite::new(write_half, FrameCodec);
        sink.send(Frame::Connect {
            client_id: client_id.to_owned(),
        })
        .await?;
        match frames.next().await {
            Some(Ok(Frame::ConnAck {
                code: ConnAckCode::Accepted,
            })) => {}
            Some(Ok(Frame::ConnAck { code })) => return Err(ClientError::Refused(code)),
            Some(Ok(other)) => return Err(ClientError::Unexpected(other.kind())),
            Some(Err(e)) => return Err(e.into()),
            None => return Err(ClientError::Closed),
        }

        let (msg_tx, messages) = mpsc::unbounded_channel();
        let (ctl_tx, control) = mpsc::unbounded_channel();
        let auto_pings = Arc::new(AtomicUsize::new(0));
        let reader = tokio::spawn(read_loop(frames, msg_tx, ctl_tx, Arc::clone(&auto_pings)));
        Ok(Self {
            client_id: client_id.to_owned(),
            publisher: Publisher {
                sink: Arc::new(Mutex::new(sink)),
            },
            messages,
            control,
            auto_pings,
            reader,
            pinger: None,
        })
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn publisher(&self) -> Publisher {
        self.publisher.clone()
    }

    /// Sends PINGREQ every `interval` so the broker keeps the session open.
    pub fn keep_alive(&mut self, interval: Duration) {
        let publisher = self.publisher.clone();
        let auto = Arc::clone(&self.auto_pings);
        if let Some(old) = self.pinger.take() {
            old.abort();
        }
        self.pinger = Some(tokio::spawn(async move {
            let mut tick = tokio::time::interval(interval);
            tick.tick().await;
            loop {
                tick.tick().await;
                auto.fetch_add(1, Ordering::SeqCst);
                if publisher.send(Frame::PingReq).await.is_err() {
                    break;
                }
            }
        }));
    }

    /// Subscribes and waits for SUBACK.
    pub async fn subscribe(&mut self, filter: &str) -> Result<(), ClientError> {
        let filter = TopicFilter::new(filter)?;
        self.publisher.send(Frame::Subscribe { filter }).await?;
        match self.next_control().await? {
            Frame::SubAck {
                code: SUBACK_GRANTED,
            } => Ok(()),
            Frame::SubAck { code } => Err(ClientError::SubscribeRefused(code)),
            other => Err(ClientError::Unexpected(other.kind())),
        }
    }

    pub async fn publish(&self, topic: &TopicName, body: impl Into<Bytes>) -> Result<(), ClientError> {
        self.publisher.publish(topic, body).await
    }

    /// Round trip through the broker. Every frame this client sent before the
    /// ping has been processed once this returns.
    pub async fn ping(&mut self) -> Result<(), ClientError> {
        self.publisher.send(Frame::PingReq).await?;
        match self.next_control().await? {
            Frame::PingResp => Ok(()),
            other => Err(ClientError::Unexpected(other.kind())),
        }
    }

    async fn next_control(&mut self) -> Result<Frame, ClientError> {
        self.control.recv().await.ok_or(ClientError::Closed)
    }

    /// Next delivered message, or `None` once the connection is gone.
    pub async fn recv(&mut self) -> Option<Message> {
        self.messages.recv().await
    }

    pub fn try_recv(&mut self) -> Option<Message> {
        self.messages.try_recv().ok()
    }

    /// Sends DISCONNECT and closes the socket.
    pub async fn disconnect(mut self) -> Result<(), ClientError> {
        if let Some(p) = self.pinger.take() {
            p.abort();
        }
        let result = self.publisher.send(Frame::Disconnect).await;
        let _ = SinkExt::<Frame>::close(&mut *self.publisher.sink.lock().await).await;
        result
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        if let Some(p) = self.pinger.take() {
            p.abort();
        }
        self.reader.abort();
    }
}

async fn read_loop(
    mut frames: FramedRead<tokio::net::tcp::OwnedReadHalf, FrameCodec>,
    messages: mpsc::UnboundedSender<Message>,
    control: mpsc::UnboundedSender<Frame>,
    auto_pings: Arc<AtomicUsize>,
) {
    while let Some(Ok(frame)) = frames.next().await {
        match frame {
            Frame::Publish { topic, body } => {
                let _ = messages.send(Message { topic, body });
            }
            Frame::PingResp
                if auto_pings
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                    .is_ok() => {}
            other => {
                let _ = control.send(other);
            }
        }
    }
}
