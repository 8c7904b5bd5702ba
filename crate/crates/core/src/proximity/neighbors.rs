use std::collections::BTreeMap;

use serde::Serialize;

use super::ProximityTable;
use crate::corpus::Country;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub partner: Country,
    pub h: f64,
    /// Another partner had exactly the same h; the earlier country in enum order won.
    pub tie: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NeighborReport {
    pub per_model: BTreeMap<String, BTreeMap<Country, Neighbor>>,
    /// Pairs `(a, b)`, `a < b`, that are each other's nearest neighbor, per model.
    pub mutual: BTreeMap<String, Vec<(Country, Country)>>,
    /// Number of models in which each pair is mutual.
    #[serde(serialize_with = "tally_as_list")]
    pub mutual_tally: BTreeMap<(Country, Country), usize>,
}

fn tally_as_list<S: serde::Serializer>(
    tally: &BTreeMap<(Country, Country), usize>,
    s: S,
) -> Result<S::Ok, S::Error> {
    s.collect_seq(tally.iter().map(|((a, b), n)| (a, b, n)))
}

/// Nearest partner of every country under every model, plus mutual pairs.
pub fn nearest_neighbors(table: &ProximityTable) -> NeighborReport {
    let mut report = NeighborReport::default();
    for (model, pairs) in &table.per_model {
        let mut countries: Vec<Country> = pairs.keys().flat_map(|(a, b)| [*a, *b]).collect();
        countries.sort();
        countries.dedup();
        let mut nn = BTreeMap::new();
        for &c in &countries {
            let mut best: Option<Neighbor> = None;
            for &o in countries.iter().filter(|&&o| o != c) {
                let Some(h) = table.get(model, c, o) else { continue };
                match &mut best {
                    None => best = Some(Neighbor { partner: o, h, tie: false }),
                    Some(b) if h > b.h => *b = Neighbor { partner: o, h, tie: false },
                    Some(b) if h == b.h => b.tie = true,
                    _ => {}
                }
            }
            if let Some(b) = best {
                nn.insert(c, b);
            }
        }
        let mut mutual = Vec::new();
        for (&c, n) in &nn {
            if c < n.partner && nn.get(&n.partner).is_some_and(|m| m.partner == c) {
                mutual.push((c, n.partner));
                *report.mutual_tally.entry((c, n.partner)).or_default() += 1;
            }
        }
        report.mutual.insert(model.clone(), mutual);
        report.per_model.insert(model.clone(), nn);
    }
    report
}
