import unittest

import numpy as np

from szo import DimensionMismatch
from szo.sparse_linalg import (
    ActiveSet,
    SparseVector,
    axpy,
    dot,
    format_vectors,
    l0_norm,
    l2_norm_sq,
    parse_vectors,
)


def random_vector(gen: np.random.Generator, dim: int, density: float) -> SparseVector:
    mask = gen.random(dim) < density
    return SparseVector.from_dense(np.where(mask, gen.normal(size=dim), 0.0))


class SparseVectorTestCase(unittest.TestCase):
    def test_canonical(self) -> None:
        v = SparseVector(5, [3, 0, 1], [2.0, 1.0, 0.0])
        self.assertEqual([0, 3], v.indices.tolist())
        self.assertEqual({0: 1.0, 3: 2.0}, v.to_dict())
        self.assertEqual(0.0, v[1])
        self.assertEqual(2.0, v[3])

    def test_immutable(self) -> None:
        v = SparseVector(4, [1], [1.0])
        with self.assertRaises(ValueError):
            v.values[0] = 3.0

    def test_errors(self) -> None:
        with self.assertRaises(ValueError):
            SparseVector(0)
        with self.assertRaises(IndexError):
            SparseVector(3, [3], [1.0])
        with self.assertRaises(ValueError):
            SparseVector(3, [1, 1], [1.0, 2.0])
        with self.assertRaises(ValueError):
            SparseVector(3, [1], [1.0, 2.0])

    def test_restrict(self) -> None:
        v = SparseVector.from_dict(6, {0: 1.0, 2: 2.0, 5: 3.0})
        self.assertEqual({2: 2.0, 5: 3.0}, v.restrict(ActiveSet(6, [2, 4, 5])).to_dict())
        with self.assertRaises(DimensionMismatch):
            v.restrict(ActiveSet(5, [2]))

    def test_gather(self) -> None:
        v = SparseVector.from_dict(6, {0: 1.0, 2: 2.0, 5: 3.0})
        self.assertEqual(
            [2.0, 0.0, 3.0], v.gather(np.array([2, 3, 5], dtype=np.int64)).tolist()
        )


class ActiveSetTestCase(unittest.TestCase):
    def test_union(self) -> None:
        a = SparseVector(10, [1, 4], [1.0, 1.0])
        b = SparseVector(10, [4, 7], [1.0, 1.0])
        active = ActiveSet.union_of(10, [a, b])
        self.assertEqual([1, 4, 7], list(active))
        self.assertIn(4, active)
        self.assertNotIn(5, active)
        self.assertEqual(0, ActiveSet.union_of(10, []).size)

    def test_full(self) -> None:
        self.assertEqual(list(range(4)), list(ActiveSet.full(4)))

    def test_dedup(self) -> None:
        self.assertEqual([1, 3], list(ActiveSet(5, [3, 1, 3])))


class DotTestCase(unittest.TestCase):
    def test_examples(self) -> None:
        self.assertEqual(8.0, dot(SparseVector(5, [0, 3], [1.0, 2.0]), SparseVector(5, [3], [4.0])))
        self.assertEqual(0.0, dot(SparseVector(5), SparseVector(5, [1], [7.0])))
        a = SparseVector(5, range(5), [1.0] * 5)
        b = SparseVector(5, range(5), [float(i) for i in range(5)])
        self.assertEqual(10.0, dot(a, b))

    def test_mismatch(self) -> None:
        with self.assertRaises(DimensionMismatch):
            dot(SparseVector(3), SparseVector(4))

    def test_dense_oracle(self) -> None:
        gen = np.random.default_rng(3)
        for _ in range(1000):
            a = random_vector(gen, 40, 0.3)
            b = random_vector(gen, 40, 0.3)
            self.assertAlmostEqual(float(a.to_dense() @ b.to_dense()), dot(a, b), places=12)
            self.assertEqual(dot(a, b), dot(b, a))


class AxpyTestCase(unittest.TestCase):
    def test_examples(self) -> None:
        y = SparseVector(3, [0], [-1.0])
        self.assertIs(y, axpy(0.0, SparseVector(3, [1], [5.0]), y))
        self.assertEqual(0, l0_norm(axpy(1.0, SparseVector(3, [0], [1.0]), y)))
        self.assertEqual(
            {1: 6.0, 2: 5.0},
            axpy(2.0, SparseVector(3, [1], [3.0]), SparseVector(3, [2], [5.0])).to_dict(),
        )

    def test_mismatch(self) -> None:
        with self.assertRaises(DimensionMismatch):
            axpy(1.0, SparseVector(3), SparseVector(4))

    def test_dense_oracle(self) -> None:
        gen = np.random.default_rng(5)
        for _ in range(1000):
            x = random_vector(gen, 30, 0.2)
            y = random_vector(gen, 30, 0.2)
            alpha = float(gen.normal())
            result = axpy(alpha, x, y)
            np.testing.assert_allclose(result.to_dense(), y.to_dense() + alpha * x.to_dense())
            self.assertFalse(np.any(result.values == 0.0))


class NormTestCase(unittest.TestCase):
    def test_l0(self) -> None:
        self.assertEqual(2, l0_norm(SparseVector.from_dict(5, {1: 1.3, 3: -0.2})))
        self.assertEqual(0, l0_norm(SparseVector(5)))
        self.assertEqual(1, l0_norm(SparseVector.from_dict(5, {0: 0.0, 1: 2.0})))

    def test_l2(self) -> None:
        self.assertEqual(25.0, l2_norm_sq(SparseVector.from_dict(2, {0: 3.0, 1: 4.0})))
        self.assertEqual(0.0, l2_norm_sq(SparseVector(2)))
        gen = np.random.default_rng(7)
        v = random_vector(gen, 100, 0.1)
        self.assertAlmostEqual(float(np.sum(v.to_dense() ** 2)), l2_norm_sq(v), places=12)


class SerialiseTestCase(unittest.TestCase):
    def test_text(self) -> None:
        a = SparseVector.from_dict(4, {0: 0.1, 3: -2.5})
        b = SparseVector(4)
        text = format_vectors([a, b], 4)
        self.assertEqual("dim=4\n0:0.1 3:-2.5\n\n", text)
        self.assertEqual([a, b], parse_vectors(text))

    def test_exact_floats(self) -> None:
        gen = np.random.default_rng(11)
        v = random_vector(gen, 64, 0.5)
        self.assertEqual([v], parse_vectors(format_vectors([v], 64)))

    def test_bad_text(self) -> None:
        with self.assertRaises(ValueError):
            parse_vectors("0:1.0\n")
        with self.assertRaises(ValueError):
            parse_vectors("dim=3\n0-1.0\n")
        with self.assertRaises(DimensionMismatch):
            format_vectors([SparseVector(3)], 4)


if __name__ == "__main__":
    unittest.main()
