use std::fs;
use std::path::{Path, PathBuf};

use kare_core::knowledge::{
    parse_graph, parse_keypoints, serialize_graph, serialize_keypoints, Entity, KeypointList,
    KnowledgeGraph, Relationship,
};
use proptest::prelude::*;

fn fixtures(kind: &str) -> Vec<(String, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(kind);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, fs::read_to_string(&p).unwrap())
        })
        .collect()
}

fn graph_fixture(name: &str) -> KnowledgeGraph {
    let (_, text) = fixtures("graphs")
        .into_iter()
        .find(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("no fixture {name}"));
    parse_graph(&text).unwrap().value
}

#[test]
fn graph_fixtures_round_trip() {
    let all = fixtures("graphs");
    assert!(all.len() >= 20, "only {} graph fixtures", all.len());
    for (name, text) in all {
        let g = parse_graph(&text)
            .unwrap_or_else(|e| panic!("{name}: {e}"))
            .value;
        g.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        let canon = serialize_graph(&g);
        let again = parse_graph(&canon).unwrap();
        assert_eq!(again.value, g, "{name}");
        assert_eq!(serialize_graph(&again.value), canon, "{name}");
        let undeclared = g.undeclared_endpoints().len();
        assert_eq!(
            again.warnings.len(),
            undeclared,
            "{name}: {:?}",
            again.warnings
        );
    }
}

#[test]
fn keypoint_fixtures_round_trip() {
    let all = fixtures("keypoints");
    assert!(all.len() >= 10, "only {} keypoint fixtures", all.len());
    for (name, text) in all {
        let k = parse_keypoints(&text)
            .unwrap_or_else(|e| panic!("{name}: {e}"))
            .value;
        let canon = serialize_keypoints(&k);
        let again = parse_keypoints(&canon).unwrap();
        assert_eq!(again.value, k, "{name}");
        assert!(again.warnings.is_empty(), "{name}");
        assert_eq!(serialize_keypoints(&again.value), canon, "{name}");
    }
}

#[test]
fn duplicate_entities_merge() {
    let g = graph_fixture("03_duplicate_entity");
    assert_eq!(g.entities.len(), 3);
    assert_eq!(
        g.entity("Amazon River").unwrap().attributes,
        ["river", "South America", "longest by volume"]
    );

    let g = graph_fixture("20_duplicate_with_no_attributes");
    assert_eq!(g.entities.len(), 2);
    assert_eq!(
        g.entities[0],
        Entity::new("Nile").with_attributes(["river"])
    );
    assert_eq!(g.relationships.len(), 2);
}

#[test]
fn attribute_free_entities() {
    let g = graph_fixture("02_no_attributes");
    assert!(g.entities.iter().all(|e| e.attributes.is_empty()));
    assert_eq!(
        serialize_graph(&g),
        "Entities:\n- Paris\n- France\n- Seine\n\nRelationships:\n\
         1. Paris -> capital of -> France\n2. Seine -> flows through -> Paris"
    );
    let g = graph_fixture("16_empty_attribute_list");
    assert!(g.entity("Oxygen").unwrap().attributes.is_empty());
}

#[test]
fn noisy_layouts() {
    let g = graph_fixture("15_bare_attribute_clause");
    assert_eq!(
        g.entity("Jupiter").unwrap().attributes,
        ["gas giant", "fifth planet"]
    );
    assert_eq!(g.entity("Sun").unwrap().attributes, ["star"]);

    let text = fixtures("graphs")
        .into_iter()
        .find(|(n, _)| n == "21_junk_lines")
        .unwrap()
        .1;
    let p = parse_graph(&text).unwrap();
    assert_eq!(p.value.entities.len(), 2);
    assert_eq!(p.value.relationships.len(), 1);
    assert_eq!(
        p.warnings.iter().map(|w| w.line).collect::<Vec<_>>(),
        [3, 8]
    );

    let g = graph_fixture("13_relationships_only");
    assert!(g.entities.is_empty());
    assert_eq!(
        g.undeclared_endpoints(),
        ["Shakespeare", "Hamlet", "Denmark"]
    );
}

#[test]
fn keypoint_details() {
    let k = |name: &str| {
        let text = fixtures("keypoints")
            .into_iter()
            .find(|(n, _)| n == name)
            .unwrap()
            .1;
        parse_keypoints(&text).unwrap()
    };
    assert_eq!(k("04_mixed_markers").value.points.len(), 4);
    assert_eq!(k("07_duplicate_points").value.points.len(), 3);
    let p = k("08_preamble");
    assert_eq!(p.value.points.len(), 2);
    assert_eq!(p.warnings.len(), 1);
    let p = k("11_empty_bullet");
    assert_eq!(p.value.points.len(), 2);
    assert_eq!(p.warnings[0].message, "empty keypoint");
}

fn field() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 .'-]{0,12}[A-Za-z0-9]".prop_filter("no arrow", |s| !s.contains("->"))
}

fn graph() -> impl Strategy<Value = KnowledgeGraph> {
    let entities = prop::collection::vec((field(), prop::collection::vec(field(), 0..4)), 0..6);
    let rels = prop::collection::vec((field(), field(), field()), 0..6);
    (entities, rels)
        .prop_map(|(es, rs)| {
            let mut g = KnowledgeGraph::default();
            for (name, attrs) in es {
                g.add_entity(Entity::new(name).with_attributes(attrs));
            }
            for e in &mut g.entities {
                let mut seen = std::collections::HashSet::new();
                e.attributes.retain(|a| seen.insert(a.clone()));
            }
            g.relationships = rs
                .into_iter()
                .map(|(s, l, t)| Relationship::new(s, l, t))
                .collect();
            g
        })
        .prop_filter("non-empty", |g| !g.is_empty())
}

proptest! {
    #[test]
    fn graph_serialize_parse_identity(g in graph()) {
        prop_assert!(g.validate().is_ok());
        let parsed = parse_graph(&serialize_graph(&g)).unwrap();
        prop_assert_eq!(parsed.value, g);
    }

    #[test]
    fn keypoint_serialize_parse_identity(points in prop::collection::vec(field(), 1..8)) {
        let k = KeypointList { points };
        let parsed = parse_keypoints(&serialize_keypoints(&k)).unwrap();
        prop_assert!(parsed.warnings.is_empty());
        prop_assert_eq!(parsed.value, k);
    }
}
