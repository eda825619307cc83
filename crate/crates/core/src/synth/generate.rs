use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Poisson};

use super::config::{MixEntry, ScenarioConfig};
use super::manifest::{build_manifest, ComponentKind, ComponentSpec, Manifest};
use crate::error::{Error, Result};
use crate::faac::SERVICE_PORTS;
use crate::flow::{AttackType, FlowLabel, FlowRecord, Protocol};
use crate::time::Timestamp;

/// Generated flows (sorted by start time) and their ground truth.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub flows: Vec<FlowRecord>,
    pub manifest: Manifest,
}

const BACKGROUND_STREAM: u64 = 1;
const EPISODE_STREAM: u64 = 1000;
const ECHO_STREAM: u64 = 2000;
const CONTAMINATION_STREAM: u64 = 3000;

const N_CLIENTS: u32 = 1000;
const SERVERS_PER_SERVICE: u32 = 4;
const EPHEMERAL_CLIENT_SHARE: f64 = 0.8;
const BOT_CLIENTS: [u32; 3] = [17, 256, 733];
const CNC_ADDR: &str = "198.51.100.23";
const DOS_VICTIM: &str = "192.168.1.1";

/// Probability that a request to `port` is answered by a response record.
pub fn response_probability(port: Option<u16>) -> f64 {
    match port {
        Some(80) | Some(443) | Some(22) => 0.95,
        Some(53) | Some(25) | Some(6667) => 0.9,
        Some(6543) => 0.8,
        Some(23) => 0.01,
        Some(70) | Some(79) => 0.5,
        _ => 0.5,
    }
}

fn is_service_port(p: u16) -> bool {
    SERVICE_PORTS.iter().any(|(_, q)| *q == p)
}

fn client_addr(i: u32) -> String {
    format!("10.0.{}.{}", i / 250, i % 250 + 1)
}

fn server_addr(port: u16, k: u32) -> String {
    let idx = SERVICE_PORTS
        .iter()
        .position(|(_, q)| *q == port)
        .unwrap_or(SERVICE_PORTS.len());
    format!("192.168.{}.{}", idx + 1, k + 1)
}

struct Emitter {
    rng: ChaCha8Rng,
    component: u32,
    out: Vec<(FlowRecord, u32)>,
}

impl Emitter {
    fn new(seed: u64, stream: u64, component: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Emitter {
            rng,
            component,
            out: Vec::new(),
        }
    }

    fn poisson(&mut self, lambda: f64) -> u64 {
        if lambda <= 0.0 {
            return 0;
        }
        Poisson::new(lambda)
            .expect("positive rate")
            .sample(&mut self.rng) as u64
    }

    fn ephemeral_port(&mut self) -> u16 {
        self.rng.random_range(49152..=65535)
    }

    fn registered_port(&mut self) -> u16 {
        loop {
            let p = self.rng.random_range(1024..=49151);
            if !is_service_port(p) {
                return p;
            }
        }
    }

    fn client_port(&mut self) -> u16 {
        if self.rng.random_bool(EPHEMERAL_CLIENT_SHARE) {
            self.ephemeral_port()
        } else {
            self.registered_port()
        }
    }

    fn packets(&mut self, p: f64) -> u64 {
        1 + Geometric::new(p).expect("valid p").sample(&mut self.rng)
    }

    fn duration(&mut self, protocol: Protocol) -> f64 {
        let d: f64 = match protocol {
            Protocol::Tcp => Exp::new(1.0 / 1.5)
                .expect("positive rate")
                .sample(&mut self.rng),
            _ => self.rng.random_range(0.0..0.2),
        };
        (d * 1000.0).round() / 1000.0
    }

    fn second_in(&mut self, start: i64, len: i64) -> Timestamp {
        Timestamp(start + self.rng.random_range(0..len))
    }

    fn push(&mut self, f: FlowRecord) {
        self.out.push((f, self.component));
    }

    /// A request and, with probability `p_resp`, its response.
    #[allow(clippy::too_many_arguments)]
    fn conversation(
        &mut self,
        t: Timestamp,
        client: String,
        client_port: u16,
        server: String,
        server_port: u16,
        protocol: Protocol,
        p_resp: f64,
        label: FlowLabel,
    ) {
        let duration = self.duration(protocol);
        let pk = self.packets(0.35);
        let by = pk * self.rng.random_range(40..=1400);
        let answered = self.rng.random_bool(p_resp);
        self.push(FlowRecord {
            start_time: t,
            duration,
            src_addr: client.clone(),
            dst_addr: server.clone(),
            src_port: client_port,
            dst_port: server_port,
            protocol,
            fwd_packets: pk,
            fwd_bytes: by,
            rev_packets: 0,
            rev_bytes: 0,
            label,
        });
        if answered {
            let pk = self.packets(0.25);
            let by = pk * self.rng.random_range(60..=1500);
            self.push(FlowRecord {
                start_time: t,
                duration,
                src_addr: server,
                dst_addr: client,
                src_port: server_port,
                dst_port: client_port,
                protocol,
                fwd_packets: pk,
                fwd_bytes: by,
                rev_packets: 0,
                rev_bytes: 0,
                label,
            });
        }
    }

    /// A single small probe packet with no answer.
    fn probe(
        &mut self,
        t: Timestamp,
        src: String,
        dst: String,
        dst_port: u16,
        label: FlowLabel,
        max_packets: u64,
    ) {
        let pk = self.rng.random_range(1..=max_packets);
        let by = pk * self.rng.random_range(40..=60);
        let src_port = self.ephemeral_port();
        self.push(FlowRecord {
            start_time: t,
            duration: 0.0,
            src_addr: src,
            dst_addr: dst,
            src_port,
            dst_port,
            protocol: Protocol::Tcp,
            fwd_packets: pk,
            fwd_bytes: by,
            rev_packets: 0,
            rev_bytes: 0,
            label,
        });
    }

    /// Calls `f(emitter, t)` for Poisson-many instants per overlapped minute
    /// of `[start, start + duration)` at `rate_per_min`.
    fn over_interval(
        &mut self,
        start: Timestamp,
        duration: i64,
        rate_per_min: f64,
        mut f: impl FnMut(&mut Self, Timestamp),
    ) {
        let end = start.seconds() + duration;
        let mut m = start.align_down(60).seconds();
        while m < end {
            let lo = m.max(start.seconds());
            let hi = (m + 60).min(end);
            let n = self.poisson(rate_per_min * (hi - lo) as f64 / 60.0);
            for _ in 0..n {
                let t = self.second_in(lo, hi - lo);
                f(self, t);
            }
            m += 60;
        }
    }
}

fn background(cfg: &ScenarioConfig, mix: &[MixEntry]) -> Emitter {
    let mut em = Emitter::new(cfg.seed, BACKGROUND_STREAM, 0);
    let cumulative: Vec<f64> = mix
        .iter()
        .scan(0.0, |acc, (_, f)| {
            *acc += f;
            Some(*acc)
        })
        .collect();
    let (start, end) = cfg.full_range();
    let mut m = start.seconds();
    while m < end.seconds() {
        let n = em.poisson(cfg.expected_rate(Timestamp(m)));
        for _ in 0..n {
            let t = em.second_in(m, 60);
            let u: f64 = em.rng.random_range(0.0..cumulative[cumulative.len() - 1]);
            let k = cumulative.partition_point(|&c| c <= u).min(mix.len() - 1);
            let service = mix[k].0;
            let (server, port, protocol) = match service {
                Some(p) => {
                    let srv = em.rng.random_range(0..SERVERS_PER_SERVICE);
                    let proto = if p == 53 {
                        Protocol::Udp
                    } else {
                        Protocol::Tcp
                    };
                    (server_addr(p, srv), p, proto)
                }
                None => {
                    let p = em.registered_port();
                    let h = em.rng.random_range(0..1000u32);
                    let proto = if em.rng.random_bool(0.8) {
                        Protocol::Tcp
                    } else {
                        Protocol::Udp
                    };
                    (format!("172.16.{}.{}", h / 250, h % 250 + 1), p, proto)
                }
            };
            let client = client_addr(em.rng.random_range(0..N_CLIENTS));
            let cport = em.client_port();
            em.conversation(
                t,
                client,
                cport,
                server,
                port,
                protocol,
                response_probability(service),
                FlowLabel::Background,
            );
        }
        m += 60;
    }
    em
}

fn irc_like(em: &mut Emitter, t: Timestamp, port: u16, label: FlowLabel) {
    let bot = BOT_CLIENTS[em.rng.random_range(0..BOT_CLIENTS.len())];
    let cport = em.client_port();
    let server = if port == 6667 {
        CNC_ADDR.to_string()
    } else {
        server_addr(port, 0)
    };
    em.conversation(
        t,
        client_addr(bot),
        cport,
        server,
        port,
        Protocol::Tcp,
        1.0,
        label,
    );
}

/// Generates the scenario. The output depends only on the configuration.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mix = cfg.parsed_mix()?;
    let mut specs: Vec<ComponentSpec> = Vec::new();
    let mut emitters = vec![background(cfg, &mix)];

    for (i, ep) in cfg.episodes.iter().enumerate() {
        let component = emitters.len() as u32;
        let mut em = Emitter::new(cfg.seed, EPISODE_STREAM + i as u64, component);
        let label = if ep.labelled {
            FlowLabel::Anomaly(ep.attack_type)
        } else {
            FlowLabel::Background
        };
        let rate = ep.intensity * cfg.base_rate;
        match ep.attack_type {
            AttackType::Dos => em.over_interval(ep.start, ep.duration, rate, |em, t| {
                let a = em.rng.random_range(1..=20);
                em.probe(t, format!("203.0.113.{a}"), DOS_VICTIM.into(), 80, label, 2);
            }),
            AttackType::Scan11 | AttackType::Scan44 => {
                let sources = if ep.attack_type == AttackType::Scan11 {
                    1
                } else {
                    4
                };
                let ports = ep.ports.clone();
                em.over_interval(ep.start, ep.duration, rate, |em, t| {
                    let a = em.rng.random_range(1..=sources);
                    let v = em.rng.random_range(1..=sources);
                    let port = match &ports {
                        Some(p) => p[em.rng.random_range(0..p.len())],
                        None => em.rng.random_range(1..=65535),
                    };
                    em.probe(
                        t,
                        format!("198.18.{i}.{a}"),
                        format!("192.168.100.{v}"),
                        port,
                        label,
                        1,
                    );
                })
            }
            AttackType::Nerisbotnet => em.over_interval(ep.start, ep.duration, rate, |em, t| {
                irc_like(em, t, 6667, label)
            }),
            AttackType::Other => {
                return Err(Error::Config(
                    "attack type `other` cannot be generated".into(),
                ))
            }
        }
        specs.push(ComponentSpec {
            kind: ComponentKind::Episode,
            episode: Some(i),
            attack_type: Some(ep.attack_type),
            start: ep.start,
            duration: ep.duration,
            labelled: ep.labelled,
        });
        emitters.push(em);
    }

    if cfg.telnet_echo {
        for (i, ep) in cfg.episodes.iter().enumerate() {
            if ep.attack_type != AttackType::Dos {
                continue;
            }
            let component = emitters.len() as u32;
            let mut em = Emitter::new(cfg.seed, ECHO_STREAM + i as u64, component);
            em.over_interval(ep.start, ep.duration, cfg.echo_rate, |em, t| {
                let client = client_addr(em.rng.random_range(0..N_CLIENTS));
                let cport = em.client_port();
                em.conversation(
                    t,
                    client,
                    cport,
                    DOS_VICTIM.into(),
                    23,
                    Protocol::Tcp,
                    1.0,
                    FlowLabel::Background,
                );
            });
            specs.push(ComponentSpec {
                kind: ComponentKind::Echo,
                episode: Some(i),
                attack_type: None,
                start: ep.start,
                duration: ep.duration,
                labelled: false,
            });
            emitters.push(em);
        }
    }

    if let Some(c) = &cfg.contamination {
        let component = emitters.len() as u32;
        let mut em = Emitter::new(cfg.seed, CONTAMINATION_STREAM, component);
        em.over_interval(c.start, c.duration, c.intensity * cfg.base_rate, |em, t| {
            irc_like(em, t, c.port, FlowLabel::Background)
        });
        specs.push(ComponentSpec {
            kind: ComponentKind::Contamination,
            episode: None,
            attack_type: None,
            start: c.start,
            duration: c.duration,
            labelled: false,
        });
        emitters.push(em);
    }

    let mut tagged: Vec<(FlowRecord, u32)> = emitters.into_iter().flat_map(|e| e.out).collect();
    tagged.sort_by_key(|(f, _)| f.start_time);
    let tags: Vec<u32> = tagged.iter().map(|(_, c)| *c).collect();
    let flows: Vec<FlowRecord> = tagged.into_iter().map(|(f, _)| f).collect();
    let manifest = build_manifest(cfg, &flows, &tags, specs);
    Ok(Scenario {
        config: cfg.clone(),
        flows,
        manifest,
    })
}
