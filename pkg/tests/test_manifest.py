import pytest

from exceptions import DataError
from services.manifest_service import ManifestService


@pytest.fixture
def service():
    return ManifestService()


@pytest.fixture
def finished(service, tmp_path):
    outputs = [tmp_path / "a.bin", tmp_path / "b.bin"]
    for i, path in enumerate(outputs):
        path.write_bytes(bytes([i]) * 16)
    manifest = service.start("train", {"seed": 0}, 0)
    path = service.finish(manifest, tmp_path / "manifest.json", outputs)
    return path, outputs


def test_loaded_manifest_verifies_untouched_outputs(service, finished):
    path, outputs = finished
    manifest = service.load(path)
    assert manifest.status == "ok"
    assert service.verify(manifest) == []
    assert service.recorded(manifest, outputs[0]) == service.sha256(outputs[0])


def test_verify_names_changed_outputs_within_the_requested_paths(service, finished, tmp_path):
    path, (a, b) = finished
    b.write_bytes(b"changed")
    manifest = service.load(path)
    assert service.verify(manifest) == [str(b)]
    assert service.verify(manifest, [a]) == []
    assert service.verify(manifest, [b]) == [str(b)]
    assert service.recorded(manifest, tmp_path / "other.bin") is None


def test_foreign_json_is_not_a_manifest(service, tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{\"rows\": []}", encoding="utf-8")
    with pytest.raises(DataError):
        service.load(path)
