/// One node of an [`IndexTree`]: the half-open index range `start..end`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub start: usize,
    pub end: usize,
    pub parent: Option<usize>,
    pub children: Option<[usize; 2]>,
    pub level: usize,
}

impl TreeNode {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Binary tree of contiguous index ranges, stored in pre-order (root at 0,
/// every parent before its children).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexTree {
    nodes: Vec<TreeNode>,
}

impl IndexTree {
    /// Halve every range longer than `leaf_size`; the left half gets the
    /// extra index.
    pub fn balanced(size: usize, leaf_size: usize) -> Self {
        assert!(leaf_size >= 1, "leaf size must be positive");
        let mut nodes = Vec::new();
        fn grow(nodes: &mut Vec<TreeNode>, start: usize, end: usize, parent: Option<usize>, level: usize, m: usize) -> usize {
            let id = nodes.len();
            nodes.push(TreeNode {
                start,
                end,
                parent,
                children: None,
                level,
            });
            if end - start > m {
                let mid = start + (end - start).div_ceil(2);
                let a = grow(nodes, start, mid, Some(id), level + 1, m);
                let b = grow(nodes, mid, end, Some(id), level + 1, m);
                nodes[id].children = Some([a, b]);
            }
            id
        }
        grow(&mut nodes, 0, size, None, 0, leaf_size);
        Self { nodes }
    }

    pub fn leaf(size: usize) -> Self {
        Self::balanced(size, size.max(1))
    }

    /// Validate a pre-order node table.
    pub(crate) fn from_nodes(nodes: Vec<TreeNode>) -> Option<Self> {
        let root = nodes.first()?;
        if root.start != 0 || root.parent.is_some() || root.end < root.start {
            return None;
        }
        for (id, n) in nodes.iter().enumerate() {
            if id > 0 && n.parent.is_none() {
                return None;
            }
            if let Some([a, b]) = n.children {
                let (na, nb) = (&nodes[a], &nodes[b]);
                if na.start != n.start || na.end != nb.start || nb.end != n.end || na.end < na.start || nb.end < nb.start {
                    return None;
                }
            }
        }
        Some(Self { nodes })
    }

    /// New root whose children are `left` and `right` (shifted past `left`).
    pub fn join(left: &IndexTree, right: &IndexTree) -> Self {
        let offset = left.size();
        let mut nodes = Vec::with_capacity(1 + left.len() + right.len());
        nodes.push(TreeNode {
            start: 0,
            end: offset + right.size(),
            parent: None,
            children: Some([1, 1 + left.len()]),
            level: 0,
        });
        for (base, shift, tree) in [(1, 0, left), (1 + left.len(), offset, right)] {
            for node in &tree.nodes {
                nodes.push(TreeNode {
                    start: node.start + shift,
                    end: node.end + shift,
                    parent: Some(node.parent.map_or(0, |p| p + base)),
                    children: node.children.map(|[a, b]| [a + base, b + base]),
                    level: node.level + 1,
                });
            }
        }
        Self { nodes }
    }

    /// The tree of the index-reversed vector: ranges mirrored, children swapped.
    pub fn mirrored(&self) -> Self {
        let size = self.size();
        let mut nodes = Vec::with_capacity(self.len());
        fn walk(src: &IndexTree, id: usize, parent: Option<usize>, size: usize, out: &mut Vec<TreeNode>) -> usize {
            let node = &src.nodes[id];
            let new_id = out.len();
            out.push(TreeNode {
                start: size - node.end,
                end: size - node.start,
                parent,
                children: None,
                level: node.level,
            });
            if let Some([a, b]) = node.children {
                let nb = walk(src, b, Some(new_id), size, out);
                let na = walk(src, a, Some(new_id), size, out);
                out[new_id].children = Some([nb, na]);
            }
            new_id
        }
        walk(self, 0, None, size, &mut nodes);
        Self { nodes }
    }

    /// Pre-order position map from `self` to `self.mirrored()`.
    pub(crate) fn mirror_map(&self) -> Vec<usize> {
        let mut map = vec![0; self.len()];
        fn walk(src: &IndexTree, id: usize, next: &mut usize, map: &mut [usize]) {
            map[id] = *next;
            *next += 1;
            if let Some([a, b]) = src.nodes[id].children {
                walk(src, b, next, map);
                walk(src, a, next, map);
            }
        }
        let mut next = 0;
        walk(self, 0, &mut next, &mut map);
        map
    }

    pub fn size(&self) -> usize {
        self.nodes[0].end
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Number of levels below the root.
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    /// Node ids grouped by level, finest level last.
    pub fn by_level(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.depth() + 1];
        for (i, n) in self.nodes.iter().enumerate() {
            out[n.level].push(i);
        }
        out
    }
}
