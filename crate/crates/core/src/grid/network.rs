use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{Bus, Carrier, Device, DeviceKind, GridError, Line, TopologyConfig};
use crate::{BusId, DeviceId};

/// Validated, immutable network topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    base_mva: f64,
    buses: Vec<Bus>,
    bus_index: BTreeMap<BusId, usize>,
    lines: Vec<Line>,
    /// (line index, from bus index, to bus index) for every electric line.
    electric: Vec<(usize, usize, usize)>,
    devices: Vec<Device>,
    device_index: BTreeMap<DeviceId, usize>,
    slack_bus: usize,
    slack_device: usize,
    heat_zone: Vec<usize>,
    heat_zone_count: usize,
}

/// Collects every problem with a topology section instead of stopping at the
/// first one.
pub fn validate_topology(cfg: &TopologyConfig) -> Vec<GridError> {
    let mut errors = Vec::new();

    if !(cfg.base_mva.is_finite() && cfg.base_mva > 0.0) {
        errors.push(GridError::InvalidParameter(format!(
            "base_mva must be positive, got {}",
            cfg.base_mva
        )));
    }

    let mut bus_ids = BTreeMap::new();
    for bus in &cfg.buses {
        if bus_ids.insert(bus.id.clone(), bus).is_some() {
            errors.push(GridError::DuplicateId {
                kind: "bus",
                id: bus.id.to_string(),
            });
        }
    }

    let mut line_ids = BTreeSet::new();
    for line in &cfg.lines {
        if !line_ids.insert(&line.id) {
            errors.push(GridError::DuplicateId {
                kind: "line",
                id: line.id.to_string(),
            });
        }
        for end in [&line.from, &line.to] {
            match bus_ids.get(end) {
                None => errors.push(GridError::DanglingReference {
                    kind: "line",
                    id: line.id.to_string(),
                    target: "bus",
                    missing: end.to_string(),
                }),
                Some(bus) if !bus.carriers.contains(&line.carrier) => {
                    errors.push(GridError::InvalidLine {
                        id: line.id.clone(),
                        reason: format!("bus `{end}` does not serve {}", line.carrier),
                    })
                }
                Some(_) => {}
            }
        }
        if line.from == line.to {
            errors.push(GridError::InvalidLine {
                id: line.id.clone(),
                reason: "from and to buses are identical".into(),
            });
        }
        if !(line.capacity.is_finite() && line.capacity > 0.0) {
            errors.push(GridError::InvalidLine {
                id: line.id.clone(),
                reason: format!("capacity must be positive, got {}", line.capacity),
            });
        }
        if line.carrier == Carrier::Electricity
            && !(line.susceptance.is_finite() && line.susceptance > 0.0)
        {
            errors.push(GridError::InvalidLine {
                id: line.id.clone(),
                reason: format!("susceptance must be positive, got {}", line.susceptance),
            });
        }
    }

    let mut device_ids = BTreeSet::new();
    for dev in &cfg.devices {
        if !device_ids.insert(&dev.id) {
            errors.push(GridError::DuplicateId {
                kind: "device",
                id: dev.id.to_string(),
            });
        }
        if !bus_ids.contains_key(&dev.bus) {
            errors.push(GridError::DanglingReference {
                kind: "device",
                id: dev.id.to_string(),
                target: "bus",
                missing: dev.bus.to_string(),
            });
        }
        errors.extend(device_issues(dev));
    }

    match &cfg.slack_bus {
        None => errors.push(GridError::NoSlack),
        Some(slack) if !bus_ids.contains_key(slack) => {
            errors.push(GridError::DanglingReference {
                kind: "topology",
                id: "slack_bus".into(),
                target: "bus",
                missing: slack.to_string(),
            })
        }
        Some(slack) => {
            let has_thermal = cfg
                .devices
                .iter()
                .any(|d| &d.bus == slack && d.kind == DeviceKind::ThermalGen);
            if !has_thermal {
                errors.push(GridError::SlackWithoutThermal(slack.clone()));
            }
            errors.extend(unreachable_electric_buses(cfg, slack));
        }
    }

    errors
}

fn device_issues(dev: &Device) -> Vec<GridError> {
    let mut issues = Vec::new();
    let mut bad = |reason: String| {
        issues.push(GridError::InvalidDevice {
            id: dev.id.clone(),
            reason,
        })
    };
    if !(dev.emission_rate.is_finite() && dev.emission_rate >= 0.0) {
        bad(format!(
            "emission_rate must be non-negative, got {}",
            dev.emission_rate
        ));
    }
    if dev.kind == DeviceKind::RenewableGen && dev.emission_rate != 0.0 {
        bad("renewable generators must have emission_rate 0".into());
    }
    match (dev.kind, dev.heat_power_ratio) {
        (DeviceKind::Chp, None) => bad("CHP units need a heat_power_ratio".into()),
        (DeviceKind::Chp, Some(r)) if !(r.is_finite() && r > 0.0) => {
            bad(format!("heat_power_ratio must be positive, got {r}"))
        }
        (DeviceKind::Chp, Some(_)) => {}
        (_, Some(_)) => bad("heat_power_ratio is only meaningful for CHP units".into()),
        (_, None) => {}
    }
    for (carrier, limit) in &dev.limits {
        if !(limit.min.is_finite() && limit.max.is_finite()) || limit.min > limit.max {
            bad(format!(
                "{carrier} limits [{}, {}] are not a valid range",
                limit.min, limit.max
            ));
        } else if limit.min < 0.0 && dev.kind != DeviceKind::Storage {
            bad(format!("{carrier} minimum must be non-negative"));
        }
    }
    issues
}

fn unreachable_electric_buses(cfg: &TopologyConfig, slack: &BusId) -> Vec<GridError> {
    let mut adjacency: BTreeMap<&BusId, Vec<&BusId>> = BTreeMap::new();
    for line in cfg.lines.iter().filter(|l| l.carrier == Carrier::Electricity) {
        adjacency.entry(&line.from).or_default().push(&line.to);
        adjacency.entry(&line.to).or_default().push(&line.from);
    }
    let mut seen = BTreeSet::from([slack]);
    let mut queue = VecDeque::from([slack]);
    while let Some(bus) = queue.pop_front() {
        for next in adjacency.get(bus).into_iter().flatten() {
            if seen.insert(*next) {
                queue.push_back(next);
            }
        }
    }
    cfg.buses
        .iter()
        .filter(|b| b.carriers.contains(&Carrier::Electricity) && !seen.contains(&b.id))
        .map(|b| GridError::Disconnected(b.id.clone()))
        .collect()
}

/// Builds an immutable [`Network`] from a topology section, failing on the
/// first validation problem.
pub fn build_network(cfg: &TopologyConfig) -> Result<Network, GridError> {
    if let Some(err) = validate_topology(cfg).into_iter().next() {
        return Err(err);
    }

    let bus_index: BTreeMap<BusId, usize> = cfg
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.clone(), i))
        .collect();
    let device_index = cfg
        .devices
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.clone(), i))
        .collect();
    let electric = cfg
        .lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.carrier == Carrier::Electricity)
        .map(|(i, l)| (i, bus_index[&l.from], bus_index[&l.to]))
        .collect();

    let slack_id = cfg.slack_bus.as_ref().ok_or(GridError::NoSlack)?;
    let slack_bus = bus_index[slack_id];
    let slack_device = cfg
        .devices
        .iter()
        .enumerate()
        .filter(|(_, d)| &d.bus == slack_id && d.kind == DeviceKind::ThermalGen)
        .min_by(|(_, a), (_, b)| a.id.cmp(&b.id))
        .map(|(i, _)| i)
        .ok_or_else(|| GridError::SlackWithoutThermal(slack_id.clone()))?;

    let (heat_zone, heat_zone_count) = heat_zones(cfg, &bus_index);

    Ok(Network {
        base_mva: cfg.base_mva,
        buses: cfg.buses.clone(),
        bus_index,
        lines: cfg.lines.clone(),
        electric,
        devices: cfg.devices.clone(),
        device_index,
        slack_bus,
        slack_device,
        heat_zone,
        heat_zone_count,
    })
}

/// Buses joined by heat lines share one zone; zones are numbered in bus order.
fn heat_zones(cfg: &TopologyConfig, bus_index: &BTreeMap<BusId, usize>) -> (Vec<usize>, usize) {
    let n = cfg.buses.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for line in cfg.lines.iter().filter(|l| l.carrier == Carrier::Heat) {
        let a = find(&mut parent, bus_index[&line.from]);
        let b = find(&mut parent, bus_index[&line.to]);
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut numbering = BTreeMap::new();
    let mut zone = vec![0; n];
    for (i, z) in zone.iter_mut().enumerate() {
        let root = find(&mut parent, i);
        let next = numbering.len();
        *z = *numbering.entry(root).or_insert(next);
    }
    (zone, numbering.len())
}

impl Network {
    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn bus_position(&self, id: &BusId) -> Option<usize> {
        self.bus_index.get(id).copied()
    }

    pub fn device(&self, id: &DeviceId) -> Option<&Device> {
        self.device_index.get(id).map(|&i| &self.devices[i])
    }

    pub fn slack_bus(&self) -> &Bus {
        &self.buses[self.slack_bus]
    }

    pub(crate) fn slack_position(&self) -> usize {
        self.slack_bus
    }

    /// The thermal generator at the slack bus that absorbs electric imbalance.
    pub fn slack_device(&self) -> &Device {
        &self.devices[self.slack_device]
    }

    /// Electric lines as (line, from bus index, to bus index).
    pub fn electric_lines(&self) -> impl Iterator<Item = (&Line, usize, usize)> {
        self.electric
            .iter()
            .map(move |&(l, f, t)| (&self.lines[l], f, t))
    }

    pub fn heat_zone(&self, bus: &BusId) -> Option<usize> {
        self.bus_position(bus).map(|i| self.heat_zone[i])
    }

    pub fn heat_zone_count(&self) -> usize {
        self.heat_zone_count
    }
}
