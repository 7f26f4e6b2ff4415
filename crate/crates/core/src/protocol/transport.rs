//! Datagram endpoints: unordered, unreliable, bounded payloads.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::fmt::Debug;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::rc::Rc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::codec::MAX_DATAGRAM;

pub trait DatagramEndpoint {
    type Addr: Clone + Ord + Debug;

    fn local_addr(&self) -> Self::Addr;
    fn send_to(&mut self, to: &Self::Addr, bytes: &[u8]) -> io::Result<()>;
    /// Returns immediately with `None` when nothing is queued.
    fn try_recv(&mut self) -> io::Result<Option<(Self::Addr, Vec<u8>)>>;
}

/// Fault injection knobs for [`SimNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FaultConfig {
    pub drop: f64,
    pub duplicate: f64,
    /// Receivers pick uniformly among the first `reorder_window` queued
    /// datagrams; 0 or 1 means FIFO.
    pub reorder_window: usize,
}

impl FaultConfig {
    pub const LOSSLESS: FaultConfig = FaultConfig {
        drop: 0.0,
        duplicate: 0.0,
        reorder_window: 0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimAddr(pub u32);

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct NetStats {
    pub sent: u64,
    pub dropped: u64,
    pub duplicated: u64,
    pub delivered: u64,
}

/// Deterministic in-memory datagram network driven by a seeded RNG.
#[derive(Debug)]
pub struct SimNetwork {
    rng: ChaCha8Rng,
    faults: FaultConfig,
    queues: BTreeMap<SimAddr, VecDeque<(SimAddr, Vec<u8>)>>,
    next_addr: u32,
    stats: NetStats,
}

impl SimNetwork {
    pub fn new(seed: u64, faults: FaultConfig) -> Rc<RefCell<Self>> {
        Rc::new(RefCell::new(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            faults,
            queues: BTreeMap::new(),
            next_addr: 1,
            stats: NetStats::default(),
        }))
    }

    pub fn set_faults(&mut self, faults: FaultConfig) {
        self.faults = faults;
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn endpoint(net: &Rc<RefCell<Self>>) -> SimEndpoint {
        let mut n = net.borrow_mut();
        let addr = SimAddr(n.next_addr);
        n.next_addr += 1;
        n.queues.insert(addr, VecDeque::new());
        SimEndpoint {
            addr,
            net: Rc::clone(net),
        }
    }

    fn send(&mut self, from: SimAddr, to: SimAddr, bytes: &[u8]) {
        self.stats.sent += 1;
        if self.faults.drop > 0.0 && self.rng.random_bool(self.faults.drop) {
            self.stats.dropped += 1;
            return;
        }
        let copies = if self.faults.duplicate > 0.0 && self.rng.random_bool(self.faults.duplicate) {
            self.stats.duplicated += 1;
            2
        } else {
            1
        };
        if let Some(q) = self.queues.get_mut(&to) {
            for _ in 0..copies {
                q.push_back((from, bytes.to_vec()));
            }
        }
    }

    fn recv(&mut self, addr: SimAddr) -> Option<(SimAddr, Vec<u8>)> {
        let window = self.faults.reorder_window;
        let q = self.queues.get_mut(&addr)?;
        if q.is_empty() {
            return None;
        }
        let idx = if window > 1 {
            self.rng.random_range(0..window.min(q.len()))
        } else {
            0
        };
        self.stats.delivered += 1;
        q.remove(idx)
    }
}

#[derive(Debug, Clone)]
pub struct SimEndpoint {
    addr: SimAddr,
    net: Rc<RefCell<SimNetwork>>,
}

impl DatagramEndpoint for SimEndpoint {
    type Addr = SimAddr;

    fn local_addr(&self) -> SimAddr {
        self.addr
    }

    fn send_to(&mut self, to: &SimAddr, bytes: &[u8]) -> io::Result<()> {
        if bytes.len() > MAX_DATAGRAM {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "datagram too large"));
        }
        self.net.borrow_mut().send(self.addr, *to, bytes);
        Ok(())
    }

    fn try_recv(&mut self) -> io::Result<Option<(SimAddr, Vec<u8>)>> {
        Ok(self.net.borrow_mut().recv(self.addr))
    }
}

/// UDP socket binding.
#[derive(Debug)]
pub struct UdpEndpoint {
    socket: UdpSocket,
    addr: SocketAddr,
    buf: Vec<u8>,
}

impl UdpEndpoint {
    pub fn bind(addr: SocketAddr) -> io::Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        let addr = socket.local_addr()?;
        socket.set_nonblocking(true)?;
        Ok(Self {
            socket,
            addr,
            // one spare byte so oversized datagrams are detectable
            buf: vec![0; MAX_DATAGRAM + 1],
        })
    }

    /// Blocks for up to `timeout` waiting for one datagram.
    pub fn recv_timeout(&mut self, timeout: Duration) -> io::Result<Option<(SocketAddr, Vec<u8>)>> {
        self.socket.set_nonblocking(false)?;
        self.socket
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let res = self.socket.recv_from(&mut self.buf);
        self.socket.set_nonblocking(true)?;
        match res {
            Ok((n, from)) => Ok(Some((from, self.buf[..n].to_vec()))),
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted
                ) =>
            {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

impl DatagramEndpoint for UdpEndpoint {
    type Addr = SocketAddr;

    fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    fn send_to(&mut self, to: &SocketAddr, bytes: &[u8]) -> io::Result<()> {
        if bytes.len() > MAX_DATAGRAM {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "datagram too large"));
        }
        self.socket.send_to(bytes, to).map(|_| ())
    }

    fn try_recv(&mut self) -> io::Result<Option<(SocketAddr, Vec<u8>)>> {
        match self.socket.recv_from(&mut self.buf) {
            Ok((n, from)) => Ok(Some((from, self.buf[..n].to_vec()))),
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_is_fifo() {
        let net = SimNetwork::new(0, FaultConfig::LOSSLESS);
        let mut a = SimNetwork::endpoint(&net);
        let mut b = SimNetwork::endpoint(&net);
        for i in 0..10u8 {
            a.send_to(&b.local_addr(), &[i]).unwrap();
        }
        let got: Vec<u8> = std::iter::from_fn(|| b.try_recv().unwrap())
            .map(|(_, d)| d[0])
            .collect();
        assert_eq!(got, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn faults_are_seeded() {
        let run = |seed| {
            let net = SimNetwork::new(
                seed,
                FaultConfig {
                    drop: 0.2,
                    duplicate: 0.1,
                    reorder_window: 5,
                },
            );
            let mut a = SimNetwork::endpoint(&net);
            let mut b = SimNetwork::endpoint(&net);
            for i in 0..200u8 {
                a.send_to(&b.local_addr(), &[i]).unwrap();
            }
            let got: Vec<u8> = std::iter::from_fn(|| b.try_recv().unwrap())
                .map(|(_, d)| d[0])
                .collect();
            let stats = net.borrow().stats();
            (got, stats)
        };
        let (x, sx) = run(7);
        let (y, _) = run(7);
        assert_eq!(x, y);
        assert!(sx.dropped > 10 && sx.duplicated > 5);
        assert_ne!(x, run(8).0);
        let mut sorted = x.clone();
        sorted.sort();
        assert_ne!(sorted, x, "window reorders");
    }

    #[test]
    fn udp_loopback() {
        let mut a = UdpEndpoint::bind("127.0.0.1:0".parse().unwrap()).unwrap();
        let mut b = UdpEndpoint::bind("127.0.0.1:0".parse().unwrap()).unwrap();
        a.send_to(&b.local_addr(), b"hi").unwrap();
        let (from, data) = b.recv_timeout(Duration::from_secs(2)).unwrap().unwrap();
        assert_eq!(from, a.local_addr());
        assert_eq!(data, b"hi");
        assert!(b.try_recv().unwrap().is_none());
        assert!(a.send_to(&b.local_addr(), &[0; MAX_DATAGRAM + 1]).is_err());
    }
}
