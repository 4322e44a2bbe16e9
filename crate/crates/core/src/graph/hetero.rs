use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    User,
    Movie,
    Review,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    /// movie → review
    E1,
    /// user → review
    E2,
    /// review → user
    E3,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::E1, EdgeType::E2, EdgeType::E3];
}

/// Users, movies and reviews with the three typed edge sets.
///
/// Nodes are numbered globally: users first, then movies, then reviews.
/// Edge `e` of type E1/E2/E3 for review `r` has index `r`, `R + r`, `2R + r`
/// in [`HeteroGraph::edge_index`], and `edge_alive` can switch any of them off.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    pub n_users: usize,
    pub n_movies: usize,
    pub n_reviews: usize,
    review_user: Vec<usize>,
    review_movie: Vec<usize>,
    edge_alive: Vec<bool>,
    /// In-edges of each user node (E3), as review indices.
    user_in: Vec<Vec<usize>>,
}

impl HeteroGraph {
    pub fn build(ds: &Dataset) -> Self {
        let n_reviews = ds.reviews.len();
        let review_user: Vec<usize> = (0..n_reviews).map(|r| ds.review_user(r)).collect();
        let review_movie: Vec<usize> = (0..n_reviews).map(|r| ds.review_movie(r)).collect();
        let mut user_in = vec![Vec::new(); ds.users.len()];
        for (r, &u) in review_user.iter().enumerate() {
            user_in[u].push(r);
        }
        HeteroGraph {
            n_users: ds.users.len(),
            n_movies: ds.movies.len(),
            n_reviews,
            review_user,
            review_movie,
            edge_alive: vec![true; 3 * n_reviews],
            user_in,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_movies + self.n_reviews
    }

    pub fn user_node(&self, u: usize) -> usize {
        u
    }

    pub fn movie_node(&self, m: usize) -> usize {
        self.n_users + m
    }

    pub fn review_node(&self, r: usize) -> usize {
        self.n_users + self.n_movies + r
    }

    /// Node type and index within its table.
    pub fn locate(&self, node: usize) -> (NodeType, usize) {
        if node < self.n_users {
            (NodeType::User, node)
        } else if node < self.n_users + self.n_movies {
            (NodeType::Movie, node - self.n_users)
        } else {
            (NodeType::Review, node - self.n_users - self.n_movies)
        }
    }

    pub fn edge_index(&self, ty: EdgeType, r: usize) -> usize {
        match ty {
            EdgeType::E1 => r,
            EdgeType::E2 => self.n_reviews + r,
            EdgeType::E3 => 2 * self.n_reviews + r,
        }
    }

    pub fn edge_count(&self, ty: EdgeType) -> usize {
        (0..self.n_reviews)
            .filter(|&r| self.edge_alive[self.edge_index(ty, r)])
            .count()
    }

    /// Copy keeping only the edges for which `keep(edge_index)` is true.
    pub fn filter_edges(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let mut g = self.clone();
        for (e, alive) in g.edge_alive.iter_mut().enumerate() {
            *alive = *alive && keep(e);
        }
        g
    }

    /// In-neighbors of `node` grouped by edge type, in a fixed order.
    pub fn in_neighbors(&self, node: usize) -> Vec<(EdgeType, Vec<usize>)> {
        match self.locate(node) {
            (NodeType::Movie, _) => vec![],
            (NodeType::Review, r) => {
                let mut out = Vec::new();
                if self.edge_alive[self.edge_index(EdgeType::E1, r)] {
                    out.push((EdgeType::E1, vec![self.movie_node(self.review_movie[r])]));
                }
                if self.edge_alive[self.edge_index(EdgeType::E2, r)] {
                    out.push((EdgeType::E2, vec![self.user_node(self.review_user[r])]));
                }
                out
            }
            (NodeType::User, u) => {
                let srcs: Vec<usize> = self.user_in[u]
                    .iter()
                    .filter(|&&r| self.edge_alive[self.edge_index(EdgeType::E3, r)])
                    .map(|&r| self.review_node(r))
                    .collect();
                if srcs.is_empty() {
                    vec![]
                } else {
                    vec![(EdgeType::E3, srcs)]
                }
            }
        }
    }

    pub fn stats(&self) -> GraphStats {
        let mut hist: BTreeMap<String, BTreeMap<usize, usize>> = BTreeMap::new();
        for node in 0..self.n_nodes() {
            let (ty, _) = self.locate(node);
            let deg: usize = self.in_neighbors(node).iter().map(|(_, s)| s.len()).sum();
            let key = serde_json::to_value(ty).unwrap().as_str().unwrap().to_string();
            *hist.entry(key).or_default().entry(deg).or_default() += 1;
        }
        GraphStats {
            users: self.n_users,
            movies: self.n_movies,
            reviews: self.n_reviews,
            e1: self.edge_count(EdgeType::E1),
            e2: self.edge_count(EdgeType::E2),
            e3: self.edge_count(EdgeType::E3),
            in_degree_histogram: hist,
        }
    }
}

/// Node/edge counts and in-degree histograms per node type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub users: usize,
    pub movies: usize,
    pub reviews: usize,
    pub e1: usize,
    pub e2: usize,
    pub e3: usize,
    pub in_degree_histogram: BTreeMap<String, BTreeMap<usize, usize>>,
}

/// Sampled neighborhood of a set of seed reviews.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    /// Global node id of each local node; seeds come first.
    pub nodes: Vec<usize>,
    /// Local index of each seed, in seed order.
    pub seeds: Vec<usize>,
    /// `(src, dst, type)` in local indices.
    pub edges: Vec<(usize, usize, EdgeType)>,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Breadth-first sampling over in-neighbors, at most `cap` per edge type at
/// each visited node. Only sampled edges are included.
pub fn sample_subgraph<R: Rng>(
    graph: &HeteroGraph,
    seed_reviews: &[usize],
    hops: usize,
    cap: usize,
    rng: &mut R,
) -> Result<Subgraph> {
    if hops == 0 || cap == 0 {
        return Err(Error::Config(format!("sampling needs hops ≥ 1 and cap ≥ 1, got {hops}/{cap}")));
    }
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut seeds = Vec::with_capacity(seed_reviews.len());
    for &r in seed_reviews {
        if r >= graph.n_reviews {
            return Err(Error::Lookup(format!("seed review {r} out of range")));
        }
        let g = graph.review_node(r);
        let idx = *local.entry(g).or_insert_with(|| {
            nodes.push(g);
            nodes.len() - 1
        });
        seeds.push(idx);
    }
    let mut frontier: Vec<usize> = (0..nodes.len()).collect();
    let mut edges = Vec::new();
    for _ in 0..hops {
        let mut next = Vec::new();
        for &dst in &frontier {
            for (ty, srcs) in graph.in_neighbors(nodes[dst]) {
                let chosen: Vec<usize> = if srcs.len() > cap {
                    let mut pick = sample(rng, srcs.len(), cap).into_vec();
                    pick.sort_unstable();
                    pick.into_iter().map(|i| srcs[i]).collect()
                } else {
                    srcs
                };
                for s in chosen {
                    let idx = match local.get(&s) {
                        Some(&i) => i,
                        None => {
                            nodes.push(s);
                            local.insert(s, nodes.len() - 1);
                            next.push(nodes.len() - 1);
                            nodes.len() - 1
                        }
                    };
                    edges.push((idx, dst, ty));
                }
            }
        }
        frontier = next;
    }
    Ok(Subgraph { nodes, seeds, edges })
}
