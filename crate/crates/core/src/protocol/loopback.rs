//! In-process transport: a hub and client sessions exchanging encoded
//! frames through per-connection queues, with byte accounting.

use std::collections::{BTreeMap, VecDeque};

use super::hub::{Action, ConnId, ServerHub};
use super::session::{ClientSession, SessionError};
use super::{Message, FRAME_HEADER_LEN};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkBytes {
    pub sent: u64,
    pub received: u64,
}

struct Link {
    session: ClientSession,
    to_client: VecDeque<Vec<u8>>,
    to_server: VecDeque<Vec<u8>>,
    bytes: LinkBytes,
    error: Option<SessionError>,
    muted: bool,
}

pub struct Loopback {
    pub hub: ServerHub,
    links: BTreeMap<ConnId, Link>,
    next_conn: ConnId,
    pub now: u64,
}

fn decode(frame: &[u8]) -> Message {
    Message::decode(&frame[FRAME_HEADER_LEN..]).expect("loopback frames are self-encoded")
}

impl Loopback {
    pub fn new(hub: ServerHub, now: u64) -> Self {
        Self { hub, links: BTreeMap::new(), next_conn: 1, now }
    }

    /// Opens a session and queues its HELLO.
    pub fn connect(&mut self, session: ClientSession) -> ConnId {
        let conn = self.next_conn;
        self.next_conn += 1;
        self.hub.connect(conn);
        let hello = session.hello(self.now).encode();
        let mut link = Link {
            session,
            to_client: VecDeque::new(),
            to_server: VecDeque::new(),
            bytes: LinkBytes::default(),
            error: None,
            muted: false,
        };
        link.to_server.push_back(hello);
        self.links.insert(conn, link);
        conn
    }

    /// Drops the connection and hands back the client state.
    pub fn disconnect(&mut self, conn: ConnId) -> Option<ClientSession> {
        let link = self.links.remove(&conn)?;
        let actions = self.hub.disconnect(conn, self.now);
        self.apply(actions);
        Some(link.session)
    }

    pub fn session(&self, conn: ConnId) -> Option<&ClientSession> {
        self.links.get(&conn).map(|l| &l.session)
    }

    pub fn session_mut(&mut self, conn: ConnId) -> Option<&mut ClientSession> {
        self.links.get_mut(&conn).map(|l| &mut l.session)
    }

    pub fn sessions(&self) -> impl Iterator<Item = (ConnId, &ClientSession)> {
        self.links.iter().map(|(&c, l)| (c, &l.session))
    }

    pub fn bytes(&self, conn: ConnId) -> LinkBytes {
        self.links.get(&conn).map(|l| l.bytes).unwrap_or_default()
    }

    pub fn error(&self, conn: ConnId) -> Option<&SessionError> {
        self.links.get(&conn).and_then(|l| l.error.as_ref())
    }

    /// A muted client keeps its connection but stops reading.
    pub fn mute(&mut self, conn: ConnId) {
        if let Some(l) = self.links.get_mut(&conn) {
            l.muted = true;
        }
    }

    /// Injects a raw message as if sent by the client.
    pub fn inject(&mut self, conn: ConnId, message: &Message) {
        if let Some(l) = self.links.get_mut(&conn) {
            l.to_server.push_back(message.encode());
        }
    }

    pub fn apply(&mut self, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Send { to, message } => {
                    let frame = message.encode();
                    for conn in to {
                        if let Some(l) = self.links.get_mut(&conn) {
                            l.bytes.received += frame.len() as u64;
                            l.to_client.push_back(frame.clone());
                        }
                    }
                }
                Action::Close { conn, .. } => {
                    if let Some(l) = self.links.get_mut(&conn) {
                        l.to_server.clear();
                        l.error.get_or_insert(SessionError::Rejected("closed by server".into()));
                    }
                }
            }
        }
    }

    /// Delivers frames until every queue is empty.
    pub fn run_until_idle(&mut self) {
        loop {
            let mut moved = false;
            let conns: Vec<ConnId> = self.links.keys().copied().collect();
            for conn in conns {
                while let Some(frame) = self.links.get_mut(&conn).and_then(|l| l.to_server.pop_front()) {
                    moved = true;
                    let l = self.links.get_mut(&conn).expect("present");
                    l.bytes.sent += frame.len() as u64;
                    let actions = self.hub.handle(conn, decode(&frame), self.now);
                    self.apply(actions);
                }
                while let Some(frame) = self.links.get_mut(&conn).and_then(|l| l.to_client.pop_front()) {
                    moved = true;
                    let l = self.links.get_mut(&conn).expect("present");
                    if l.error.is_some() || l.muted {
                        continue;
                    }
                    match l.session.handle(decode(&frame)) {
                        Ok(replies) => l.to_server.extend(replies.iter().map(Message::encode)),
                        Err(e) => l.error = Some(e),
                    }
                }
            }
            if !moved {
                return;
            }
        }
    }

    /// Advances the clock and lets the hub act on it.
    pub fn tick(&mut self, now: u64) {
        self.now = now;
        let actions = self.hub.tick(now);
        self.apply(actions);
        self.run_until_idle();
    }

    pub fn force_round(&mut self) {
        let actions = self.hub.force_round(self.now);
        self.apply(actions);
        self.run_until_idle();
    }
}
