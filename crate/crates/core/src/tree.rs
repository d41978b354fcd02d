//! Bracketed constituency trees: reading, writing and span extraction.
//!
//! A node whose only child is a bare word is a preterminal and does not
//! count as a constituent. Wrapper nodes labelled `ROOT`, `TOP` or nothing
//! that hold a single phrase are stripped.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Word(String),
    Phrase { label: String, children: Vec<Node> },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl LabeledSpan {
    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    pub root: Node,
}

impl Node {
    fn is_preterminal(&self) -> bool {
        matches!(self, Node::Phrase { children, .. }
            if children.len() == 1 && matches!(children[0], Node::Word(_)))
    }
}

fn tokenize(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' | ')' => {
                if let Some(b) = start.take() {
                    out.push(&s[b..i]);
                }
                out.push(&s[i..i + 1]);
            }
            c if c.is_whitespace() => {
                if let Some(b) = start.take() {
                    out.push(&s[b..i]);
                }
            }
            _ => {
                if start.is_none() {
                    start = Some(i);
                }
            }
        }
    }
    if let Some(b) = start {
        out.push(&s[b..]);
    }
    out
}

impl Tree {
    pub fn parse(s: &str) -> Result<Tree, String> {
        let tokens = tokenize(s);
        if tokens.first() != Some(&"(") {
            return Err("tree must start with '('".into());
        }
        let mut pos = 0;
        let root = parse_node(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(format!("unexpected trailing input at token {}", pos + 1));
        }
        let mut root = root;
        loop {
            match root {
                Node::Phrase { ref label, ref children }
                    if (label.is_empty() || label == "ROOT" || label == "TOP")
                        && children.len() == 1
                        && matches!(children[0], Node::Phrase { .. })
                        && !children[0].is_preterminal() =>
                {
                    root = children[0].clone();
                }
                _ => break,
            }
        }
        Ok(Tree { root })
    }

    pub fn words(&self) -> Vec<&str> {
        fn walk<'a>(n: &'a Node, out: &mut Vec<&'a str>) {
            match n {
                Node::Word(w) => out.push(w),
                Node::Phrase { children, .. } => children.iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn len(&self) -> usize {
        self.words().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every phrasal node as a labelled span, preterminals excluded,
    /// in pre-order.
    pub fn constituents(&self) -> Vec<LabeledSpan> {
        fn walk(n: &Node, pos: &mut usize, out: &mut Vec<LabeledSpan>) {
            match n {
                Node::Word(_) => *pos += 1,
                Node::Phrase { .. } if n.is_preterminal() => *pos += 1,
                Node::Phrase { label, children } => {
                    let at = out.len();
                    let start = *pos;
                    out.push(LabeledSpan { start, end: start, label: label.clone() });
                    children.iter().for_each(|c| walk(c, pos, out));
                    out[at].end = *pos;
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut 0, &mut out);
        out
    }

    /// Builds a tree over `words` from a nested (laminar) set of spans. Words
    /// not covered by a smaller span become bare children. The whole-sentence
    /// span is added with label `X` when absent.
    pub fn from_spans<S: AsRef<str>>(words: &[S], spans: &[LabeledSpan]) -> Tree {
        let n = words.len();
        let mut sorted: Vec<LabeledSpan> = spans.to_vec();
        if !sorted.iter().any(|s| s.start == 0 && s.end == n) {
            sorted.push(LabeledSpan { start: 0, end: n, label: "X".into() });
        }
        // Outer spans first: by start, then by decreasing width.
        sorted.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
        sorted.dedup_by(|a, b| a.start == b.start && a.end == b.end);
        fn build<S: AsRef<str>>(words: &[S], spans: &[LabeledSpan], idx: &mut usize) -> Node {
            let me = spans[*idx].clone();
            *idx += 1;
            let word = |i: usize| Node::Word(words[i].as_ref().to_string());
            if me.end - me.start == 1 {
                // Keep width-1 phrases distinguishable from preterminals.
                let tag = Node::Phrase { label: "_".into(), children: vec![word(me.start)] };
                return Node::Phrase { label: me.label, children: vec![tag] };
            }
            let mut children = Vec::new();
            let mut pos = me.start;
            while pos < me.end {
                if *idx < spans.len() && spans[*idx].start == pos && spans[*idx].end <= me.end {
                    pos = spans[*idx].end;
                    children.push(build(words, spans, idx));
                } else {
                    children.push(word(pos));
                    pos += 1;
                }
            }
            Node::Phrase { label: me.label, children }
        }
        let mut idx = 0;
        Tree { root: build(words, &sorted, &mut idx) }
    }
}

fn parse_node(tokens: &[&str], pos: &mut usize) -> Result<Node, String> {
    match tokens.get(*pos) {
        None => Err("unbalanced brackets: unexpected end of input".into()),
        Some(&")") => Err(format!("unbalanced brackets: unexpected ')' at token {}", *pos + 1)),
        Some(&"(") => {
            *pos += 1;
            let label = match tokens.get(*pos) {
                Some(&t) if t != "(" && t != ")" => {
                    *pos += 1;
                    t.to_string()
                }
                _ => String::new(),
            };
            let mut children = Vec::new();
            loop {
                match tokens.get(*pos) {
                    None => return Err("unbalanced brackets: missing ')'".into()),
                    Some(&")") => {
                        *pos += 1;
                        break;
                    }
                    _ => children.push(parse_node(tokens, pos)?),
                }
            }
            if children.is_empty() {
                return Err(format!("empty constituent `{}`", label));
            }
            Ok(Node::Phrase { label, children })
        }
        Some(&w) => {
            *pos += 1;
            Ok(Node::Word(w.to_string()))
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Word(w) => write!(f, "{}", w),
            Node::Phrase { label, children } => {
                write!(f, "({}", label)?;
                for c in children {
                    write!(f, " {}", c)?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(start: usize, end: usize, label: &str) -> LabeledSpan {
        LabeledSpan { start, end, label: label.into() }
    }

    #[test]
    fn reads_labelled_spans() {
        let t = Tree::parse("(S (NP (DT a) (NN dog)) (VP (VBZ runs)))").unwrap();
        let mut c = t.constituents();
        c.sort();
        assert_eq!(c, vec![span(0, 2, "NP"), span(0, 3, "S"), span(2, 3, "VP")]);
        assert_eq!(t.words(), ["a", "dog", "runs"]);
    }

    #[test]
    fn single_token_tree_has_only_trivial_spans() {
        let t = Tree::parse("(NP (NN dog))").unwrap();
        assert_eq!(t.constituents(), vec![span(0, 1, "NP")]);
    }

    #[test]
    fn strips_root_wrappers() {
        let a = Tree::parse("(ROOT (S (NP a b) (VP c)))").unwrap();
        let b = Tree::parse("( (S (NP a b) (VP c)))").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.constituents()[0], span(0, 3, "S"));
    }

    #[test]
    fn unbalanced_brackets_are_rejected() {
        assert!(Tree::parse("(S (NP a b)").is_err());
        assert!(Tree::parse("(S a))").is_err());
        assert!(Tree::parse("a b").is_err());
    }

    #[test]
    fn bare_words_round_trip() {
        let s = "(NT0 (NT1 a b) c)";
        assert_eq!(Tree::parse(s).unwrap().to_string(), s);
    }

    #[test]
    fn from_spans_rebuilds_nesting() {
        let words = ["a", "b", "c", "d"];
        let spans = [span(0, 4, "S"), span(1, 4, "VP"), span(2, 4, "NP")];
        let t = Tree::from_spans(&words, &spans);
        assert_eq!(t.to_string(), "(S a (VP b (NP c d)))");
        let mut back = t.constituents();
        back.sort();
        let mut want = spans.to_vec();
        want.sort();
        assert_eq!(back, want);
    }

    #[test]
    fn serialize_parse_round_trip_keeps_spans() {
        let t = Tree::parse("(S (NP (DT the) (JJ big) (NN dog)) (VP (VBD sat) (PP (IN on) (NP (PRP it)))))").unwrap();
        let again = Tree::parse(&t.to_string()).unwrap();
        assert_eq!(t.constituents(), again.constituents());
        let rebuilt = Tree::from_spans(&t.words(), &t.constituents());
        let mut a = rebuilt.constituents();
        let mut b = t.constituents();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
