"""Parse two AMR graphs, show their token graphs and compare them with Smatch."""

from __future__ import annotations

from factgraph.amr import parse_penman, serialize_penman
from factgraph.canon import amr_to_token_graph, build_vocab, label_corpus, to_bipartite
from factgraph.smatch import smatch, smatch_bruteforce

SUMMARY = '(v / visit-01 :ARG0 (p / person :name (n / name :op1 "Mary")) :ARG1 (c / city :name (n2 / name :op1 "Rome")))'
DOCUMENT = '(v / visit-01 :ARG0 (p / person :name (n / name :op1 "Mary")) :ARG1 (c / city :name (n2 / name :op1 "Paris")) :polarity -)'


def main() -> None:
    s, d = parse_penman(SUMMARY), parse_penman(DOCUMENT)
    print(serialize_penman(d))
    vocab = build_vocab(label_corpus([s, d]), max_size=80)
    for name, g in (("summary", s), ("document", d)):
        bg = to_bipartite(g)
        tg = amr_to_token_graph(g, vocab)
        print(f"{name}: {len(g.instances)} variables, {len(g.edges)} edges, "
              f"{len(bg.nodes)} bipartite nodes, {len(tg)} tokens, {tg.edge_counts()}")
    hill, exact = smatch(s, d, restarts=8), smatch_bruteforce(s, d)
    print(f"smatch hill climbing f1 {hill.f1:.4f}, exhaustive f1 {exact.f1:.4f}")


if __name__ == "__main__":
    main()
