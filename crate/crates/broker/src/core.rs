//! Routing state and per-connection frame handling, independent of sockets.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use parking_lot::RwLock;
use smartfridge_wire::{ConnAckCode, Frame, TopicFilter, TopicName, SUBACK_GRANTED};
use tracing::{info, warn};

use crate::queue::OutboundQueue;

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const DEFAULT_KEEPALIVE: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrokerConfig {
    pub queue_capacity: usize,
    /// Connections silent for longer than this are closed. `None` disables
    /// the check.
    pub keepalive: Option<Duration>,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            keepalive: Some(DEFAULT_KEEPALIVE),
        }
    }
}

#[derive(Debug)]
struct SessionEntry {
    filters: Vec<TopicFilter>,
    queue: Arc<OutboundQueue>,
}

/// Live sessions keyed by client id. Routing takes the read lock, session
/// changes take the write lock.
#[derive(Debug, Default)]
pub struct Broker {
    config: BrokerConfig,
    sessions: RwLock<HashMap<String, SessionEntry>>,
}

impl Broker {
    pub fn new(config: BrokerConfig) -> Self {
        Self {
            config,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    /// A fresh outbound queue sized from the config.
    pub fn new_queue(&self) -> Arc<OutboundQueue> {
        Arc::new(OutboundQueue::new(self.config.queue_capacity))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_connected(&self, client_id: &str) -> bool {
        self.sessions.read().contains_key(client_id)
    }

    pub fn subscriptions(&self, client_id: &str) -> Vec<TopicFilter> {
        self.sessions
            .read()
            .get(client_id)
            .map(|s| s.filters.clone())
            .unwrap_or_default()
    }

    fn register(&self, client_id: &str, queue: &Arc<OutboundQueue>) -> bool {
        let mut sessions = self.sessions.write();
        if sessions.contains_key(client_id) {
            return false;
        }
        sessions.insert(
            client_id.to_owned(),
            SessionEntry {
                filters: Vec::new(),
                queue: Arc::clone(queue),
            },
        );
        true
    }

    fn subscribe(&self, client_id: &str, filter: TopicFilter) {
        if let Some(entry) = self.sessions.write().get_mut(client_id) {
            if !entry.filters.contains(&filter) {
                entry.filters.push(filter);
            }
        }
    }

    /// Removes the session only if it still belongs to `queue`, so a late
    /// teardown never evicts a newer session that reused the id.
    fn unregister(&self, client_id: &str, queue: &Arc<OutboundQueue>) {
        let mut sessions = self.sessions.write();
        if sessions
            .get(client_id)
            .is_some_and(|e| Arc::ptr_eq(&e.queue, queue))
        {
            sessions.remove(client_id);
        }
    }

    /// Enqueues one copy of the message per session with a matching filter
    /// and returns the ids it went to.
    pub fn route_publish(&self, topic: &TopicName, body: &Bytes) -> Vec<String> {
        let sessions = self.sessions.read();
        let mut delivered = Vec::new();
        for (client_id, entry) in sessions.iter() {
            if !entry.filters.iter().any(|f| f.matches(topic)) {
                continue;
            }
            let frame = Frame::Publish {
                topic: topic.clone(),
                body: body.clone(),
            };
            if entry.queue.push(frame) {
                warn!(
                    client_id = client_id.as_str(),
                    drops = entry.queue.drop_count(),
                    "outbound queue full, dropped oldest frame"
                );
            }
            delivered.push(client_id.clone());
        }
        delivered
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    /// Send a frame back to this connection.
    Reply(Frame),
    /// Flush pending output and close the connection.
    Close,
}

/// Protocol state for one connection.
#[derive(Debug)]
pub struct Connection {
    broker: Arc<Broker>,
    queue: Arc<OutboundQueue>,
    client_id: Option<String>,
}

impl Connection {
    pub fn new(broker: Arc<Broker>) -> Self {
        let queue = broker.new_queue();
        Self {
            broker,
            queue,
            client_id: None,
        }
    }

    pub fn client_id(&self) -> Option<&str> {
        self.client_id.as_deref()
    }

    /// Frames destined for this connection, including routed publishes.
    pub fn queue(&self) -> &Arc<OutboundQueue> {
        &self.queue
    }

    pub fn handle_frame(&mut self, frame: Frame) -> Vec<Action> {
        let Some(client_id) = self.client_id.clone() else {
            return self.handle_connect(frame);
        };
        match frame {
            Frame::Subscribe { filter } => {
                self.broker.subscribe(&client_id, filter);
                vec![Action::Reply(Frame::SubAck {
                    code: SUBACK_GRANTED,
                })]
            }
            Frame::Publish { topic, body } => {
                self.broker.route_publish(&topic, &body);
                Vec::new()
            }
            Frame::PingReq => vec![Action::Reply(Frame::PingResp)],
            Frame::Disconnect => vec![Action::Close],
            other => {
                warn!(
                    client_id = client_id.as_str(),
                    kind = ?other.kind(),
                    "unexpected frame from client"
                );
                vec![Action::Close]
            }
        }
    }

    fn handle_connect(&mut self, frame: Frame) -> Vec<Action> {
        let Frame::Connect { client_id } = frame else {
            warn!(kind = ?frame.kind(), "frame before CONNECT");
            return vec![Action::Close];
        };
        let refuse = |code| vec![Action::Reply(Frame::ConnAck { code }), Action::Close];
        if client_id.is_empty() {
            return refuse(ConnAckCode::IdentifierRejected);
        }
        if !self.broker.register(&client_id, &self.queue) {
            warn!(client_id = client_id.as_str(), "client id already in use");
            return refuse(ConnAckCode::IdentifierInUse);
        }
        info!(client_id = client_id.as_str(), "connected");
        self.client_id = Some(client_id);
        vec![Action::Reply(Frame::ConnAck {
            code: ConnAckCode::Accepted,
        })]
    }

    /// Removes the session from the registry. Idempotent.
    pub fn teardown(&mut self) {
        if let Some(client_id) = self.client_id.take() {
            self.broker.unregister(&client_id, &self.queue);
            info!(
                client_id = client_id.as_str(),
                drops = self.queue.drop_count(),
                "disconnected"
            );
        }
        self.queue.close();
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.teardown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn broker() -> Arc<Broker> {
        Arc::new(Broker::new(BrokerConfig::default()))
    }

    fn connect(broker: &Arc<Broker>, id: &str) -> Connection {
        let mut c = Connection::new(Arc::clone(broker));
        let actions = c.handle_frame(Frame::Connect {
            client_id: id.into(),
        });
        assert_eq!(
            actions,
            vec![Action::Reply(Frame::ConnAck {
                code: ConnAckCode::Accepted
            })]
        );
        c
    }

    fn subscribe(c: &mut Connection, filter: &str) {
        let actions = c.handle_frame(Frame::Subscribe {
            filter: TopicFilter::new(filter).unwrap(),
        });
        assert_eq!(actions, vec![Action::Reply(Frame::SubAck { code: 0 })]);
    }

    #[test]
    fn frames_before_connect_close() {
        let b = broker();
        for frame in [Frame::PingReq, Frame::Disconnect, Frame::SubAck { code: 0 }] {
            let mut c = Connection::new(Arc::clone(&b));
            assert_eq!(c.handle_frame(frame), vec![Action::Close]);
        }
        assert_eq!(b.session_count(), 0);
    }

    #[test]
    fn duplicate_id_is_refused_until_first_leaves() {
        let b = broker();
        let mut first = connect(&b, "dev1");
        let mut second = Connection::new(Arc::clone(&b));
        let actions = second.handle_frame(Frame::Connect {
            client_id: "dev1".into(),
        });
        assert_eq!(
            actions,
            vec![
                Action::Reply(Frame::ConnAck {
                    code: ConnAckCode::IdentifierInUse
                }),
                Action::Close
            ]
        );
        second.teardown();
        assert!(b.is_connected("dev1"));
        first.teardown();
        assert!(!b.is_connected("dev1"));
        connect(&b, "dev1");
    }

    #[test]
    fn empty_id_rejected() {
        let b = broker();
        let mut c = Connection::new(Arc::clone(&b));
        let actions = c.handle_frame(Frame::Connect {
            client_id: String::new(),
        });
        assert_eq!(actions[0], Action::Reply(Frame::ConnAck {
            code: ConnAckCode::IdentifierRejected
        }));
    }

    #[test]
    fn second_connect_on_same_connection_closes() {
        let b = broker();
        let mut c = connect(&b, "a");
        let actions = c.handle_frame(Frame::Connect {
            client_id: "b".into(),
        });
        assert_eq!(actions, vec![Action::Close]);
    }

    #[test]
    fn overlapping_filters_deliver_once() {
        let b = broker();
        let mut sub = connect(&b, "sub");
        subscribe(&mut sub, "fridge/#");
        subscribe(&mut sub, "fridge/+/env");
        let mut publisher = connect(&b, "pub");
        let topic = TopicName::new("fridge/d1/env").unwrap();
        publisher.handle_frame(Frame::publish(topic.clone(), "x"));
        let got = sub.queue().drain();
        assert_eq!(got, vec![Frame::publish(topic, "x")]);
    }

    #[test]
    fn no_subscribers_is_empty_delivery() {
        let b = broker();
        let _c = connect(&b, "only");
        let topic = TopicName::new("fridge/d1/env").unwrap();
        assert!(b.route_publish(&topic, &Bytes::from_static(b"{}")).is_empty());
    }

    #[test]
    fn publisher_receives_own_message_when_subscribed() {
        let b = broker();
        let mut c = connect(&b, "loop");
        subscribe(&mut c, "a/b");
        c.handle_frame(Frame::publish(TopicName::new("a/b").unwrap(), "1"));
        assert_eq!(c.queue().len(), 1);
    }

    #[test]
    fn full_queue_drops_oldest_and_counts() {
        let b = Arc::new(Broker::new(BrokerConfig {
            queue_capacity: 3,
            keepalive: None,
        }));
        let mut sub = connect(&b, "slow");
        subscribe(&mut sub, "t");
        let topic = TopicName::new("t").unwrap();
        for i in 0..5u8 {
            b.route_publish(&topic, &Bytes::from(vec![i]));
        }
        assert_eq!(sub.queue().drop_count(), 2);
        let bodies: Vec<_> = sub
            .queue()
            .drain()
            .into_iter()
            .map(|f| match f {
                Frame::Publish { body, .. } => body[0],
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(bodies, vec![2, 3, 4]);
    }

    #[test]
    fn disconnect_tears_down() {
        let b = broker();
        let mut c = connect(&b, "x");
        assert_eq!(c.handle_frame(Frame::Disconnect), vec![Action::Close]);
        c.teardown();
        assert_eq!(b.session_count(), 0);
        assert!(c.queue().is_closed());
    }
}
