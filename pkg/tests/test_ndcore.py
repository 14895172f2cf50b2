"""
ndcore Tests

Tensor construction, narrow broadcasting, the division safeguard, reductions,
the reverse-mode graph and tensor export/import.
"""

import numpy as np
import pytest


def _numpy_view(small, target):
    """Shape that lines `small` up with `target` for numpy broadcasting"""
    if small == target:
        return target
    if len(small) == 1:
        return (1, small[0]) + (1,) * (len(target) - 2)
    return small + (1,) * (len(target) - len(small))


@pytest.mark.unit
class TestTensor:
    """Test Tensor construction and immutability"""

    def test_default_dtype_is_float64(self):
        """Test python lists become float64"""
        from featshift.ndcore import Tensor

        t = Tensor([[1, 2], [3, 4]])
        assert t.dtype == "float64"
        assert t.shape == (2, 2)

    def test_float32_input_keeps_dtype(self):
        """Test float32 arrays stay float32"""
        from featshift.ndcore import Tensor

        assert Tensor(np.ones(3, dtype=np.float32)).dtype == "float32"

    def test_buffer_is_read_only(self):
        """Test in-place writes are rejected"""
        from featshift.ndcore import Tensor

        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_constructor_copies(self):
        """Test later edits of the source array do not leak in"""
        from featshift.ndcore import Tensor

        source = np.array([1.0, 2.0])
        t = Tensor(source)
        source[0] = 9.0
        assert t.data[0] == 1.0

    def test_non_finite_values_rejected(self):
        """Test NaN input raises with its position"""
        from featshift.errors import NumericalDomainError
        from featshift.ndcore import Tensor

        with pytest.raises(NumericalDomainError) as exc_info:
            Tensor([1.0, np.nan, 3.0])
        assert exc_info.value.positions == [(1,)]

    def test_rank_above_four_rejected(self):
        """Test five-dimensional data is refused"""
        from featshift.errors import ShapeMismatchError
        from featshift.ndcore import Tensor

        with pytest.raises(ShapeMismatchError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_unsupported_dtype(self):
        """Test integer dtypes are refused"""
        from featshift.ndcore import Tensor

        with pytest.raises(ValueError):
            Tensor([1, 2], dtype="int32")

    def test_item_requires_single_element(self):
        """Test item() on a vector raises"""
        from featshift.errors import ShapeMismatchError
        from featshift.ndcore import Tensor

        assert Tensor(3.5).item() == 3.5
        with pytest.raises(ShapeMismatchError):
            Tensor([1.0, 2.0]).item()


@pytest.mark.unit
class TestBroadcasting:
    """Test the narrow broadcasting rules"""

    def test_scalar_operand(self):
        """Test python scalars broadcast on either side"""
        from featshift.ndcore import Tensor

        x = Tensor([1.0, 2.0])
        np.testing.assert_allclose((x + 1).data, [2.0, 3.0])
        np.testing.assert_allclose((1 - x).data, [0.0, -1.0])
        np.testing.assert_allclose((2 / x).data, [2.0, 1.0])

    def test_batch_channel_against_4d(self, x64):
        """Test [B,C] broadcasts over H and W"""
        from featshift.ndcore import Tensor, add

        bc = Tensor(np.arange(12.0).reshape(4, 3))
        out = add(x64, bc)
        np.testing.assert_allclose(out.data, x64.data + bc.data[:, :, None, None])

    def test_channel_vector_against_4d(self, x64):
        """Test [C] broadcasts over B, H and W"""
        from featshift.ndcore import Tensor, mul

        c = Tensor([1.0, 2.0, 3.0])
        out = mul(c, x64)
        np.testing.assert_allclose(out.data, x64.data * c.data[None, :, None, None])

    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
    def test_matches_explicit_tile(self, seed, op):
        """Test every allowed broadcast equals the op on an np.tile'd operand"""
        from featshift.ndcore import Tensor, elementwise

        gen = np.random.default_rng(seed)
        rank = int(gen.integers(1, 5))
        target = tuple(int(v) for v in gen.integers(1, 5, size=rank))
        smalls = [target, ()]
        if rank >= 2:
            smalls.append((target[1],))
        if rank >= 3:
            smalls.append(target[:2])
        numpy_op = {"add": np.add, "sub": np.subtract, "mul": np.multiply, "div": np.divide}[op]

        for small in smalls:
            view = _numpy_view(small, target)
            big = gen.normal(size=target)
            values = np.asarray(gen.uniform(0.5, 1.5, size=small) * gen.choice([-1.0, 1.0], size=small))
            tiled = np.tile(np.reshape(values, view), tuple(t // v for t, v in zip(target, view)))
            assert tiled.shape == target

            out = elementwise(op, Tensor(big), Tensor(values))
            np.testing.assert_allclose(out.data, numpy_op(big, tiled), rtol=1e-14)
            if op != "div":
                flipped = elementwise(op, Tensor(values), Tensor(big))
                np.testing.assert_allclose(flipped.data, numpy_op(tiled, big), rtol=1e-14)

    def test_broadcast_to_matches_numpy(self, x64):
        """Test the explicit tile helper against np.broadcast_to"""
        from featshift.errors import ShapeMismatchError
        from featshift.ndcore import Tensor
        from featshift.ndcore.ops import broadcast_to

        bc = Tensor(np.arange(12.0).reshape(4, 3))
        c = Tensor([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(broadcast_to(bc, x64.shape), np.broadcast_to(bc.data[:, :, None, None], x64.shape))
        np.testing.assert_array_equal(broadcast_to(c, x64.shape), np.broadcast_to(c.data[None, :, None, None], x64.shape))
        np.testing.assert_array_equal(broadcast_to(c, (2, 3)), np.broadcast_to(c.data, (2, 3)))
        np.testing.assert_array_equal(broadcast_to(Tensor(2.5), (2, 3)), np.full((2, 3), 2.5))
        tiled = broadcast_to(bc, x64.shape)
        tiled[0, 0, 0, 0] = -1.0
        assert bc.data[0, 0] == 0.0
        with pytest.raises(ShapeMismatchError):
            broadcast_to(Tensor(np.ones(4)), x64.shape)

    def test_incompatible_shapes(self, x64):
        """Test [B] against [B,C,H,W] is not numpy-style broadcast"""
        from featshift.errors import ShapeMismatchError
        from featshift.ndcore import Tensor, add

        with pytest.raises(ShapeMismatchError):
            add(x64, Tensor(np.ones(4)))

    def test_mixed_dtypes(self, x64, x32):
        """Test float32 and float64 never mix implicitly"""
        from featshift.errors import DtypeMismatchError
        from featshift.ndcore import add

        with pytest.raises(DtypeMismatchError):
            add(x64, x32)


@pytest.mark.unit
class TestDivisionSafeguard:
    """Test the divisor floor per dtype"""

    def test_float64_floor(self):
        """Test |divisor| below 1e-12 raises in float64"""
        from featshift.errors import NumericalDomainError
        from featshift.ndcore import Tensor, div

        with pytest.raises(NumericalDomainError) as exc_info:
            div(Tensor([1.0, 1.0]), Tensor([1.0, 1e-13]))
        assert exc_info.value.positions == [(1,)]

    def test_float32_floor_is_larger(self):
        """Test 1e-8 is legal in float64 but not in float32"""
        from featshift.errors import NumericalDomainError
        from featshift.ndcore import Tensor, div

        div(Tensor([1e-8]), Tensor([1e-8]))
        with pytest.raises(NumericalDomainError):
            div(Tensor([1e-8], dtype="float32"), Tensor([1e-8], dtype="float32"))

    def test_zero_divisor_never_clamped(self):
        """Test division by zero raises instead of returning a clamped value"""
        from featshift.errors import NumericalDomainError
        from featshift.ndcore import Tensor

        with pytest.raises(NumericalDomainError):
            Tensor([1.0]) / 0.0

    def test_sqrt_and_log_domain(self):
        """Test sqrt of negatives and log of zero raise"""
        from featshift.errors import NumericalDomainError
        from featshift.ndcore import Tensor, log, sqrt

        with pytest.raises(NumericalDomainError):
            sqrt(Tensor([-1.0]))
        with pytest.raises(NumericalDomainError):
            log(Tensor([0.0]))

    def test_overflow_is_reported(self):
        """Test exp overflow surfaces as a domain error"""
        from featshift.errors import NumericalDomainError
        from featshift.ndcore import Tensor, exp

        with np.errstate(over="ignore"):
            with pytest.raises(NumericalDomainError):
                exp(Tensor([1000.0]))


@pytest.mark.unit
class TestReductions:
    """Test sum, mean and variance reductions"""

    def test_named_spatial_mean(self, x64):
        """Test axis names resolve for 4-D tensors"""
        from featshift.ndcore import reduce

        out = reduce("mean", x64, ("H", "W"))
        assert out.shape == (4, 3)
        np.testing.assert_allclose(out.data, x64.data.mean(axis=(2, 3)))

    def test_population_variance(self, x64):
        """Test the default divisor is N"""
        from featshift.ndcore import reduce

        out = reduce("variance", x64, ("H", "W"))
        np.testing.assert_allclose(out.data, x64.data.var(axis=(2, 3)), rtol=1e-12)

    def test_sample_variance(self, x64):
        """Test divisor N-1 matches ddof=1"""
        from featshift.ndcore import reduce

        out = reduce("variance", x64, ("B",), divisor="N-1")
        np.testing.assert_allclose(out.data, x64.data.var(axis=0, ddof=1), rtol=1e-12)

    def test_constant_input_has_zero_variance(self):
        """Test a constant tensor has exactly zero variance"""
        from featshift.ndcore import Tensor, reduce

        out = reduce("variance", Tensor(np.full((2, 2, 3, 3), 0.1)), ("H", "W"))
        assert np.all(out.data == 0.0)

    def test_keepdims(self, x64):
        """Test keepdims leaves length-1 axes"""
        from featshift.ndcore import reduce

        assert reduce("sum", x64, (2, 3), keepdims=True).shape == (4, 3, 1, 1)

    def test_empty_axis_set(self, x64):
        """Test reducing over no axes raises"""
        from featshift.errors import EmptyReductionError
        from featshift.ndcore import reduce

        with pytest.raises(EmptyReductionError):
            reduce("sum", x64, ())

    def test_axis_names_need_4d(self):
        """Test axis names on a 2-D tensor are rejected"""
        from featshift.ndcore import Tensor, reduce

        with pytest.raises(ValueError):
            reduce("sum", Tensor(np.ones((2, 3))), ("B",))

    def test_sample_variance_of_single_element(self):
        """Test N-1 with one element is a domain error"""
        from featshift.errors import NumericalDomainError
        from featshift.ndcore import Tensor, reduce

        with pytest.raises(NumericalDomainError):
            reduce("variance", Tensor(np.ones((1, 3))), (0,), divisor="N-1")


@pytest.mark.unit
class TestLayers:
    """Test conv2d, linear, pooling and cross-entropy forward values"""

    def test_conv2d_output_shape(self, x64):
        """Test stride 2 with padding 1 halves odd spatial sizes up"""
        from featshift.ndcore import Tensor, conv2d

        w = Tensor(np.ones((6, 3, 3, 3)))
        out = conv2d(x64, w, stride=2, pad=1)
        assert out.shape == (4, 6, 3, 3)

    def test_conv2d_matches_direct_sum(self, np_rng):
        """Test one output element against a hand-written window sum"""
        from featshift.ndcore import Tensor, conv2d

        x = np_rng.normal(size=(1, 2, 4, 4))
        w = np_rng.normal(size=(1, 2, 3, 3))
        out = conv2d(Tensor(x), Tensor(w))
        expected = (x[0, :, 1:4, 0:3] * w[0]).sum()
        np.testing.assert_allclose(out.data[0, 0, 1, 0], expected)

    def test_conv2d_channel_mismatch(self, x64):
        """Test wrong input channels raise"""
        from featshift.errors import ShapeMismatchError
        from featshift.ndcore import Tensor, conv2d

        with pytest.raises(ShapeMismatchError):
            conv2d(x64, Tensor(np.ones((2, 5, 3, 3))))

    def test_global_avg_pool(self, x64):
        """Test pooling keeps [B,C,1,1]"""
        from featshift.ndcore import global_avg_pool

        out = global_avg_pool(x64)
        assert out.shape == (4, 3, 1, 1)
        np.testing.assert_allclose(out.data[..., 0, 0], x64.data.mean(axis=(2, 3)))

    def test_cross_entropy_uniform_logits(self):
        """Test zero logits give log(K)"""
        from featshift.ndcore import Tensor, cross_entropy

        loss = cross_entropy(Tensor(np.zeros((5, 4))), [0, 1, 2, 3, 0])
        assert loss.item() == pytest.approx(np.log(4.0))

    def test_cross_entropy_label_range(self):
        """Test labels outside 0..K-1 raise"""
        from featshift.ndcore import Tensor, cross_entropy

        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])

    def test_index_select_bounds(self, x64):
        """Test out-of-range indices raise"""
        from featshift.errors import ShapeMismatchError
        from featshift.ndcore import index_select

        assert index_select(x64, [3, 0]).shape == (2, 3, 5, 5)
        with pytest.raises(ShapeMismatchError):
            index_select(x64, [4])


@pytest.mark.unit
class TestGraph:
    """Test recording and reverse-mode accumulation"""

    def test_simple_backward(self):
        """Test d/dw sum(w * x) = sum(x) for a broadcast scalar weight"""
        from featshift.ndcore import Graph, Tensor

        w = Tensor(2.0, requires_grad=True)
        x = Tensor([1.0, 2.0, 3.0])
        with Graph() as graph:
            loss = (w * x).sum()
        grads = graph.backward(loss)
        np.testing.assert_allclose(grads[w], 6.0)

    def test_reused_tensor_accumulates(self):
        """Test x used twice gets both contributions"""
        from featshift.ndcore import Graph, Tensor

        x = Tensor([3.0], requires_grad=True)
        with Graph() as graph:
            loss = (x * x + x).sum()
        grads = graph.backward(loss)
        np.testing.assert_allclose(grads[x], [7.0])

    def test_no_recording_outside_graph(self):
        """Test ops outside a graph produce untracked tensors"""
        from featshift.ndcore import Tensor

        x = Tensor([1.0], requires_grad=True)
        assert (x * 2).requires_grad is False

    def test_stop_gradient(self):
        """Test detached branches contribute nothing"""
        from featshift.ndcore import Graph, Tensor, stop_gradient

        x = Tensor([2.0], requires_grad=True)
        with Graph() as graph:
            loss = (x * stop_gradient(x)).sum()
        grads = graph.backward(loss)
        np.testing.assert_allclose(grads[x], [2.0])

    def test_backward_only_once(self):
        """Test a consumed graph refuses a second backward"""
        from featshift.errors import GraphError
        from featshift.ndcore import Graph, Tensor

        x = Tensor([1.0], requires_grad=True)
        with Graph() as graph:
            loss = (x * x).sum()
        graph.backward(loss)
        with pytest.raises(GraphError):
            graph.backward(loss)

    def test_non_scalar_loss(self):
        """Test backward needs a scalar"""
        from featshift.errors import GraphError
        from featshift.ndcore import Graph, Tensor

        x = Tensor([1.0, 2.0], requires_grad=True)
        with Graph() as graph:
            out = x * 2
        with pytest.raises(GraphError):
            graph.backward(out)

    def test_gradient_dtype_follows_leaf(self):
        """Test float32 leaves get float32 gradients"""
        from featshift.ndcore import Graph, Tensor

        x = Tensor(np.ones((2, 3), dtype=np.float32), requires_grad=True)
        with Graph() as graph:
            loss = (x * x).sum()
        assert graph.backward(loss)[x].dtype == np.float32

    def test_graphs_are_thread_local(self):
        """Test a graph entered on one thread records nothing from another"""
        import threading

        from featshift.ndcore import Graph, Tensor, current_graph

        seen = []
        with Graph():
            thread = threading.Thread(target=lambda: seen.append(current_graph()))
            thread.start()
            thread.join()
        assert seen == [None]
        assert (Tensor([1.0], requires_grad=True) * 2).requires_grad is False


@pytest.mark.unit
class TestTensorIO:
    """Test export/import of tensors with a JSON sidecar"""

    def test_export_writes_sidecar(self, tmp_path, x32):
        """Test the binary size and sidecar contents"""
        import json

        from featshift.ndcore import export_tensor

        path = export_tensor(x32, tmp_path / "x.bin")
        meta = json.loads((tmp_path / "x.bin.json").read_text())
        assert meta == {"shape": [4, 3, 5, 5], "dtype": "float32", "byte_order": "little"}
        assert path.stat().st_size == 4 * 3 * 5 * 5 * 4

    def test_import_restores_values(self, tmp_path, x64):
        """Test values, shape and dtype survive bit-exactly"""
        from featshift.ndcore import export_tensor, import_tensor

        restored = import_tensor(export_tensor(x64, tmp_path / "x.bin"))
        assert restored.dtype == "float64"
        assert np.array_equal(restored.data, x64.data)

    def test_truncated_payload(self, tmp_path, x64):
        """Test a short binary is reported as a shape mismatch"""
        from featshift.errors import ShapeMismatchError
        from featshift.ndcore import export_tensor, import_tensor

        path = export_tensor(x64, tmp_path / "x.bin")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ShapeMismatchError):
            import_tensor(path)
