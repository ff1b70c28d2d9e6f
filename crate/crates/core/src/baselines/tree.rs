//! Dependency-tree comparisons: ordered tree edit distance (Zhang-Shasha)
//! and a Weisfeiler-Lehman subtree kernel.

use std::collections::HashMap;

/// Ordered tree with a label per node; `children[i]` in surface order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTree {
    pub labels: Vec<String>,
    pub children: Vec<Vec<usize>>,
    pub root: usize,
}

impl LabeledTree {
    /// Builds the tree from 1-based heads (0 = attached to the root). A
    /// virtual `ROOT` node is added on top so multi-rooted parses stay a
    /// single tree.
    pub fn from_heads(heads: &[usize], labels: &[String]) -> Self {
        let n = heads.len();
        let mut all = labels.to_vec();
        all.push("ROOT".into());
        let root = n;
        let mut children = vec![Vec::new(); n + 1];
        for (i, &h) in heads.iter().enumerate() {
            let parent = if h == 0 || h > n || h - 1 == i { root } else { h - 1 };
            children[parent].push(i);
        }
        // Detach cycles: any node unreachable from the root hangs off it.
        let mut seen = vec![false; n + 1];
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            if !std::mem::replace(&mut seen[v], true) {
                stack.extend(children[v].iter().copied());
            }
        }
        for i in 0..n {
            if !seen[i] {
                for c in children.iter_mut() {
                    c.retain(|&x| x != i);
                }
                children[root].push(i);
                let mut stack = vec![i];
                while let Some(v) = stack.pop() {
                    if !std::mem::replace(&mut seen[v], true) {
                        stack.extend(children[v].iter().copied());
                    }
                }
            }
        }
        for c in &mut children {
            c.sort_unstable();
        }
        LabeledTree {
            labels: all,
            children,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Postorder node list and, per postorder position, the postorder
    /// index of its leftmost leaf descendant.
    fn postorder(&self) -> (Vec<usize>, Vec<usize>) {
        let mut order = Vec::with_capacity(self.len());
        let mut lml = Vec::with_capacity(self.len());
        fn walk(t: &LabeledTree, v: usize, order: &mut Vec<usize>, lml: &mut Vec<usize>) -> usize {
            let mut leftmost = None;
            for &c in &t.children[v] {
                let l = walk(t, c, order, lml);
                leftmost.get_or_insert(l);
            }
            let pos = order.len();
            order.push(v);
            let l = leftmost.unwrap_or(pos);
            lml.push(l);
            l
        }
        walk(self, self.root, &mut order, &mut lml);
        (order, lml)
    }
}

/// Unit-cost ordered tree edit distance.
pub fn tree_edit_distance(a: &LabeledTree, b: &LabeledTree) -> usize {
    let (oa, la) = a.postorder();
    let (ob, lb) = b.postorder();
    let (n, m) = (oa.len(), ob.len());
    let keyroots = |l: &[usize]| -> Vec<usize> {
        let mut last: HashMap<usize, usize> = HashMap::new();
        for (i, &x) in l.iter().enumerate() {
            last.insert(x, i);
        }
        let mut k: Vec<usize> = last.into_values().collect();
        k.sort_unstable();
        k
    };
    let mut td = vec![vec![0usize; m]; n];
    let mut fd = vec![vec![0usize; m + 1]; n + 1];
    for &i in &keyroots(&la) {
        for &j in &keyroots(&lb) {
            let (li, lj) = (la[i], lb[j]);
            fd[0][0] = 0;
            for x in li..=i {
                fd[x - li + 1][0] = fd[x - li][0] + 1;
            }
            for y in lj..=j {
                fd[0][y - lj + 1] = fd[0][y - lj] + 1;
            }
            for x in li..=i {
                for y in lj..=j {
                    let (fx, fy) = (x - li + 1, y - lj + 1);
                    if la[x] == li && lb[y] == lj {
                        let sub = usize::from(a.labels[oa[x]] != b.labels[ob[y]]);
                        fd[fx][fy] = (fd[fx - 1][fy] + 1).min(fd[fx][fy - 1] + 1).min(fd[fx - 1][fy - 1] + sub);
                        td[x][y] = fd[fx][fy];
                    } else {
                        let (px, py) = (la[x] - li, lb[y] - lj);
                        fd[fx][fy] = (fd[fx - 1][fy] + 1).min(fd[fx][fy - 1] + 1).min(fd[px][py] + td[x][y]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

fn wl_features(t: &LabeledTree, iterations: usize) -> HashMap<String, f64> {
    let n = t.len();
    let mut neighbours = vec![Vec::new(); n];
    for (p, cs) in t.children.iter().enumerate() {
        for &c in cs {
            neighbours[p].push(c);
            neighbours[c].push(p);
        }
    }
    let mut labels = t.labels.clone();
    let mut feats = HashMap::new();
    for it in 0..=iterations {
        for l in &labels {
            *feats.entry(format!("{it}:{l}")).or_insert(0.0) += 1.0;
        }
        if it == iterations {
            break;
        }
        labels = (0..n)
            .map(|v| {
                let mut ns: Vec<&str> = neighbours[v].iter().map(|&u| labels[u].as_str()).collect();
                ns.sort_unstable();
                format!("{}({})", labels[v], ns.join(","))
            })
            .collect();
    }
    feats
}

/// Cosine-normalized Weisfeiler-Lehman subtree kernel.
pub fn wl_kernel(a: &LabeledTree, b: &LabeledTree, iterations: usize) -> f64 {
    let fa = wl_features(a, iterations);
    let fb = wl_features(b, iterations);
    let dot: f64 = fa.iter().map(|(k, v)| v * fb.get(k).unwrap_or(&0.0)).sum();
    let na: f64 = fa.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = fb.values().map(|v| v * v).sum::<f64>().sqrt();
    dot / (na * nb)
}
