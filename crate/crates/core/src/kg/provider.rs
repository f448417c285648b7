//! Sources of concept vocabulary: a deterministic offline stub and an HTTP
//! chat-completion backend.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::provider::{chat, HttpSettings, ProviderError};

/// Something that can be asked for key concepts and their associations.
///
/// `attempt` distinguishes re-queries so deterministic sources can return
/// fresh candidates.
pub trait ConceptSource {
    fn key_concepts(&self, mission: &str, v: usize, attempt: usize) -> Result<Vec<String>, ProviderError>;

    /// Associated words, each tagged with the index of the source word it came
    /// from (`None` when the source cannot attribute it).
    fn associated(
        &self,
        words: &[String],
        attempt: usize,
    ) -> Result<Vec<(Option<usize>, String)>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConceptProvider {
    Stub { seed: u64 },
    Http(HttpSettings),
}

impl Default for ConceptProvider {
    fn default() -> Self {
        ConceptProvider::Stub { seed: 0 }
    }
}

pub fn key_concept_prompt(mission: &str, v: usize) -> String {
    format!(
        "List {v} typical vocabularies to represent {}? Note: Everything should be a single word.",
        mission.replace('_', " ")
    )
}

pub fn association_prompt(words: &[String]) -> String {
    format!(
        "What are associated words with vocabularies in set {{{}}}? Note: Everything should be a single word.",
        words.join(", ")
    )
}

/// Splits a free-form list answer into items (commas, newlines, bullets, numbering).
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.split(['\n', ',', ';'])
        .map(|item| {
            item.trim()
                .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*' | '•'))
                .trim()
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

impl ConceptSource for ConceptProvider {
    fn key_concepts(&self, mission: &str, v: usize, attempt: usize) -> Result<Vec<String>, ProviderError> {
        match self {
            ConceptProvider::Stub { seed } => Ok(stub_key_concepts(mission, v, *seed, attempt)),
            ConceptProvider::Http(s) => Ok(parse_word_list(&chat(s, &key_concept_prompt(mission, v))?)),
        }
    }

    fn associated(
        &self,
        words: &[String],
        attempt: usize,
    ) -> Result<Vec<(Option<usize>, String)>, ProviderError> {
        match self {
            ConceptProvider::Stub { seed } => Ok(stub_associated(words, *seed, attempt)),
            ConceptProvider::Http(s) => Ok(parse_word_list(&chat(s, &association_prompt(words))?)
                .into_iter()
                .map(|w| (None, w))
                .collect()),
        }
    }
}

fn rng_for(parts: &[&str], seed: u64, attempt: usize) -> ChaCha8Rng {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(p.as_bytes());
        h.write_u8(0xff);
    }
    h.write_u64(seed);
    h.write_u64(attempt as u64);
    ChaCha8Rng::seed_from_u64(h.finish())
}

fn stub_key_concepts(mission: &str, v: usize, seed: u64, attempt: usize) -> Vec<String> {
    let mut rng = rng_for(&["key", mission], seed, attempt);
    let mut own: Vec<&str> = mission_bank(mission).to_vec();
    own.shuffle(&mut rng);
    let mut general: Vec<&str> = GENERAL_BANK.to_vec();
    general.shuffle(&mut rng);
    own.into_iter()
        .chain(general)
        .take(v)
        .map(str::to_string)
        .collect()
}

fn stub_associated(words: &[String], seed: u64, attempt: usize) -> Vec<(Option<usize>, String)> {
    let mut out = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let mut rng = rng_for(&["assoc", w], seed, attempt);
        for a in GENERAL_BANK.choose_multiple(&mut rng, 2) {
            out.push((Some(i), a.to_string()));
        }
    }
    out
}

fn mission_bank(mission: &str) -> &'static [&'static str] {
    match mission.to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
        "dos" | "ddos" | "denial_of_service" => &[
            "flood", "botnet", "overload", "saturation", "amplification", "outage", "bandwidth",
            "exhaustion", "volumetric", "disruption", "spike", "unavailability", "zombie", "traffic",
        ],
        "reconnaissance" | "recon" => &[
            "scanning", "probe", "enumeration", "fingerprinting", "discovery", "sweep", "mapping",
            "footprinting", "ports", "banner", "survey", "nmap", "topology", "surveillance",
        ],
        "brute_force" | "bruteforce" => &[
            "credential", "password", "guessing", "login", "dictionary", "authentication",
            "lockout", "cracking", "wordlist", "stuffing", "username", "attempts", "ssh", "hash",
        ],
        "os_scan" => &["fingerprinting", "kernel", "ttl", "signature", "operating", "stack", "probe", "detection"],
        "vulnerability_scan" => &["cve", "exploit", "weakness", "patch", "scanner", "misconfiguration", "audit", "exposure"],
        "port_scan" => &["ports", "sweep", "syn", "listening", "services", "nmap", "closed", "open"],
        "icmp_flood" => &["ping", "echo", "icmp", "flood", "smurf", "saturation", "requests", "replies"],
        "slowloris" => &["slow", "headers", "keepalive", "connections", "apache", "starvation", "partial", "sockets"],
        "syn_flood" => &["syn", "handshake", "halfopen", "backlog", "spoofing", "flood", "tcp", "exhaustion"],
        "udp_flood" => &["udp", "datagrams", "flood", "amplification", "reflection", "bandwidth", "random", "volumetric"],
        "dns_flood" => &["dns", "resolver", "queries", "amplification", "nxdomain", "recursion", "flood", "nameserver"],
        "dictionary_attack" => &["dictionary", "wordlist", "password", "credential", "guessing", "login", "rockyou", "hashes"],
        _ => &[],
    }
}

const GENERAL_BANK: &[&str] = &[
    "attack", "network", "security", "intrusion", "malware", "threat", "packet", "firewall",
    "anomaly", "payload", "protocol", "server", "client", "session", "exploit", "vulnerability",
    "encryption", "certificate", "handshake", "latency", "throughput", "router", "gateway",
    "switch", "endpoint", "host", "daemon", "service", "socket", "port", "header", "checksum",
    "fragment", "sequence", "acknowledgment", "timeout", "retransmission", "congestion",
    "bandwidth", "jitter", "signature", "heuristic", "alert", "incident", "forensics", "logging",
    "audit", "compliance", "policy", "access", "privilege", "escalation", "lateral", "pivot",
    "persistence", "exfiltration", "beacon", "command", "control", "backdoor", "trojan", "worm",
    "ransomware", "phishing", "spoofing", "sniffing", "injection", "overflow", "shellcode",
    "rootkit", "keylogger", "spyware", "adware", "proxy", "tunnel", "vpn", "tor", "anonymity",
    "botmaster", "herder", "infection", "propagation", "scanner", "crawler", "spider", "honeypot",
    "sandbox", "quarantine", "mitigation", "remediation", "patching", "hardening", "segmentation",
    "isolation", "monitoring", "telemetry", "netflow", "capture", "inspection", "deep", "entropy",
    "obfuscation", "evasion", "polymorphic", "zeroday", "advisory", "bulletin", "triage",
    "responder", "analyst", "operator", "defender", "adversary", "attacker", "victim", "target",
    "asset", "inventory", "baseline", "deviation", "threshold", "rate", "burst", "volume",
    "connection", "stream", "datagram", "frame", "octet", "address", "subnet", "mask", "route",
    "hop", "ttl", "multicast", "broadcast", "unicast", "iot", "sensor", "camera", "thermostat",
    "firmware", "embedded", "device", "appliance", "cloud", "edge", "cluster", "node", "replica",
    "integrity", "confidentiality", "availability", "authenticity", "nonrepudiation", "token",
    "cookie", "nonce", "salt", "cipher", "key", "tls", "ssl", "http", "mqtt", "coap", "dns",
];
