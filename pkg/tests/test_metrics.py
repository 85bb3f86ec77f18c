import math
import unittest

from szo.metrics import (
    ChunkSpan,
    accuracy,
    chunk_f1,
    chunk_spans,
    corpus_bleu,
    corpus_chunk_f1,
    ngram_stats,
    sentence_bleu,
    sentence_bleu_smoothed,
    zero_one_loss,
)


class ChunkF1TestCase(unittest.TestCase):
    def test_spans(self) -> None:
        self.assertEqual(
            [ChunkSpan(0, 2), ChunkSpan(3, 4)], chunk_spans(["B", "I", "O", "B"])
        )
        self.assertEqual([ChunkSpan(0, 1), ChunkSpan(1, 2)], chunk_spans(["B", "B"]))
        self.assertEqual(
            [ChunkSpan(0, 1, "NP"), ChunkSpan(1, 2, "VP")],
            chunk_spans(["B-NP", "I-VP"]),
        )
        with self.assertRaises(ValueError):
            chunk_spans(["X"])
        with self.assertRaises(ValueError):
            ChunkSpan(2, 2)

    def test_identical(self) -> None:
        self.assertEqual(1.0, chunk_f1(["B", "I", "O", "B"], ["B", "I", "O", "B"]))

    def test_all_outside(self) -> None:
        self.assertEqual(0.0, chunk_f1(["O", "O", "O", "O"], ["B", "I", "O", "B"]))

    def test_partial(self) -> None:
        self.assertAlmostEqual(2 / 3, chunk_f1(["B", "I", "O", "O"], ["B", "I", "O", "B"]))

    def test_no_chunks(self) -> None:
        self.assertEqual(1.0, chunk_f1(["O", "O"], ["O", "O"]))

    def test_symmetric(self) -> None:
        a = ["B", "I", "B", "O", "B", "I"]
        b = ["B", "O", "B", "I", "B", "I"]
        self.assertAlmostEqual(chunk_f1(a, b), chunk_f1(b, a))

    def test_length_mismatch(self) -> None:
        with self.assertRaises(ValueError):
            chunk_f1(["B"], ["B", "O"])

    def test_corpus(self) -> None:
        pairs = [(["B", "I", "O", "O"], ["B", "I", "O", "B"]), (["B"], ["B"])]
        # 2 matched, 2 predicted, 3 gold
        self.assertAlmostEqual(0.8, corpus_chunk_f1(pairs))


class SentenceBleuTestCase(unittest.TestCase):
    def test_identity(self) -> None:
        ref = "the cat sat on the mat".split()
        self.assertAlmostEqual(1.0, sentence_bleu_smoothed(ref, ref))

    def test_disjoint(self) -> None:
        hyp = "a b c d e".split()
        ref = "v w x y z".split()
        expected = (0.01 / 5 * 0.01 / 4 * 0.01 / 3 * 0.01 / 2) ** 0.25
        self.assertAlmostEqual(expected, sentence_bleu_smoothed(hyp, ref), places=12)

    def test_brevity_penalty(self) -> None:
        # unigram precision 1, the missing orders are floored, times exp(1 - 4/1)
        expected = (1.0 * 0.01**3) ** 0.25 * math.exp(-3.0)
        self.assertAlmostEqual(
            expected, sentence_bleu_smoothed(["the"], "the cat sat down".split()), places=12
        )

    def test_order_matters(self) -> None:
        ref = "the quick brown fox jumps".split()
        swapped = "quick the brown fox jumps".split()
        self.assertLess(sentence_bleu_smoothed(swapped, ref), sentence_bleu_smoothed(ref, ref))

    def test_empty(self) -> None:
        self.assertEqual(0.0, sentence_bleu_smoothed([], ["a"]))
        with self.assertRaises(ValueError):
            sentence_bleu_smoothed(["a"], [])

    def test_range(self) -> None:
        ref = "one two three four five six".split()
        for hyp in (["one"], "two one".split(), "one two three".split(), ref + ref):
            value = sentence_bleu_smoothed(hyp, ref)
            self.assertGreaterEqual(value, 0.0)
            self.assertLessEqual(value, 1.0)

    def test_stats(self) -> None:
        stats = ngram_stats("the the the".split(), "the cat".split())
        self.assertEqual((1, 0, 0, 0), stats.matches)
        self.assertEqual((3, 2, 1, 0), stats.counts)


class CorpusBleuTestCase(unittest.TestCase):
    def test_identity(self) -> None:
        pairs = [("a b c d e".split(),) * 2, ("f g h i".split(),) * 2]
        self.assertAlmostEqual(1.0, corpus_bleu(pairs))

    def test_single_pair(self) -> None:
        hyp = "the cat sat on a mat".split()
        ref = "the cat sat on the mat".split()
        self.assertEqual(sentence_bleu(hyp, ref), corpus_bleu([(hyp, ref)]))

    def test_aggregate(self) -> None:
        pairs = [
            ("a b c d".split(), "a b c d".split()),
            ("a b x d".split(), "a b c d".split()),
        ]
        # matches 7/8, 4/6, 2/4, 1/2 and equal lengths
        expected = (7 / 8 * 4 / 6 * 2 / 4 * 1 / 2) ** 0.25
        self.assertAlmostEqual(expected, corpus_bleu(pairs), places=12)

    def test_empty(self) -> None:
        with self.assertRaises(ValueError):
            corpus_bleu([])
        with self.assertRaises(ValueError):
            corpus_bleu([(["a"], [])])


class ZeroOneTestCase(unittest.TestCase):
    def test_loss(self) -> None:
        self.assertEqual(0.0, zero_one_loss(2, 2))
        self.assertEqual(1.0, zero_one_loss(1, 3))

    def test_accuracy(self) -> None:
        pairs = [(0, 0), (1, 2), (3, 3), (2, 2)]
        losses = [zero_one_loss(p, g) for p, g in pairs]
        self.assertEqual(1.0 - sum(losses) / len(losses), accuracy(pairs))
        with self.assertRaises(ValueError):
            accuracy([])


if __name__ == "__main__":
    unittest.main()
