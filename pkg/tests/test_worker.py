import pytest
import yaml

from main import EXIT_ERROR
from worker import load_jobs, process_job


class TestLoadJobs:
    def test_mapping_with_jobs(self, tmp_path):
        path = tmp_path / "sweep.yaml"
        path.write_text(yaml.safe_dump({"jobs": [{"experiment": "hum", "config": "c.yaml"}]}))
        assert load_jobs(str(path)) == [{"experiment": "hum", "config": "c.yaml"}]

    def test_bare_list(self, tmp_path):
        path = tmp_path / "sweep.yaml"
        path.write_text(yaml.safe_dump([{"experiment": "steer", "config": "c.yaml", "seed": 2}]))
        assert load_jobs(str(path))[0]["seed"] == 2

    def test_rejects_scalars(self, tmp_path):
        path = tmp_path / "sweep.yaml"
        path.write_text(yaml.safe_dump({"jobs": ["stage1"]}))
        with pytest.raises(ValueError):
            load_jobs(str(path))


class TestProcessJob:
    def test_failed_job_reports_error_status(self, tmp_path):
        res = process_job({"experiment": "hum", "config": str(tmp_path / "absent.yaml")})
        assert res["status"] == EXIT_ERROR
        assert "finished_at" in res

    def test_malformed_job(self):
        assert process_job({"config": "x.yaml"})["status"] == EXIT_ERROR
