import os

import pytest

from lrtab.errors import InterpreterMissing
from lrtab.sandbox import SandboxFactory, SandboxLimits, SandboxStatus
from lrtab.tables import Table


POINTS_TABLE = Table(
    title="points",
    columns=["Team", "Points"],
    rows=[["Liquigas", "15"], ["Rabobank", "11"]],
)


@pytest.fixture(scope="module")
def factory():
    return SandboxFactory(limits=SandboxLimits(wall_ms=20000))


class TestExecution:
    def test_prints_computed_value(self, factory):
        with factory.session("i1", POINTS_TABLE) as session:
            result = session.run(
                "a = int(df[df['Team'] == 'Liquigas']['Points'].values[0])\n"
                "b = int(df[df['Team'] == 'Rabobank']['Points'].values[0])\n"
                "print(a - b)\n"
            )
        assert result.status is SandboxStatus.OK
        assert result.stdout.strip() == "4"
        assert result.exit_code == 0

    def test_cells_arrive_as_object_strings(self, factory):
        with factory.session("i2", POINTS_TABLE) as session:
            result = session.run("print(type(df['Points'].iloc[0]).__name__)")
        assert result.status is SandboxStatus.OK
        assert result.stdout.strip() == "str"

    def test_state_persists_between_runs(self, factory):
        with factory.session("i3", POINTS_TABLE) as session:
            first = session.run("df['Bonus'] = ['1', '2']")
            assert first.status is SandboxStatus.OK
            second = session.run("print(df['Bonus'].tolist())")
        assert second.status is SandboxStatus.OK
        assert second.stdout.strip() == "['1', '2']"

    def test_mutated_values_round_trip_as_strings(self, factory):
        with factory.session("i4", POINTS_TABLE) as session:
            session.run("df['N'] = 5")
            result = session.run("print(df['N'].tolist())")
        assert result.stdout.strip() == "['5', '5']"
        assert session.table.columns[-1] == "N"

    def test_runtime_error_surfaces_traceback(self, factory):
        with factory.session("i5", POINTS_TABLE) as session:
            result = session.run("1 / 0")
        assert result.status is SandboxStatus.RUNTIME_ERROR
        assert "ZeroDivisionError" in result.stderr
        assert result.exit_code == 1

    def test_error_does_not_update_table(self, factory):
        with factory.session("i6", POINTS_TABLE) as session:
            result = session.run("df['X'] = '9'\nraise ValueError('after mutation')")
            assert result.status is SandboxStatus.RUNTIME_ERROR
            check = session.run("print(list(df.columns))")
        assert "'X'" not in check.stdout

    def test_empty_table_loads(self, factory):
        empty = Table(title="t", columns=["a"], rows=[])
        with factory.session("i7", empty) as session:
            result = session.run("print(len(df))")
        assert result.status is SandboxStatus.OK
        assert result.stdout.strip() == "0"


class TestIsolation:
    def test_sessions_do_not_share_state(self, factory):
        with factory.session("a", POINTS_TABLE) as first, \
                factory.session("b", POINTS_TABLE) as second:
            first.run("df['Marker'] = 'seen'")
            result = second.run("print('Marker' in df.columns)")
        assert result.stdout.strip() == "False"

    def test_write_inside_scratch_allowed(self, factory):
        with factory.session("i8", POINTS_TABLE) as session:
            result = session.run(
                "open('notes.txt', 'w').write('ok')\n"
                "print(open('notes.txt').read())\n"
            )
            assert result.status is SandboxStatus.OK
            assert result.stdout.strip() == "ok"

    def test_absolute_write_outside_scratch_blocked(self, factory, tmp_path):
        target = tmp_path / "escape.txt"
        with factory.session("i9", POINTS_TABLE) as session:
            result = session.run(f"open({str(target)!r}, 'w').write('x')")
        assert result.status is SandboxStatus.RUNTIME_ERROR
        assert "PermissionError" in result.stderr
        assert not target.exists()

    def test_relative_parent_write_blocked(self, factory):
        with factory.session("i10", POINTS_TABLE) as session:
            result = session.run("open('../escape.txt', 'w').write('x')")
            scratch = session.scratch
        assert result.status is SandboxStatus.RUNTIME_ERROR
        assert not os.path.exists(os.path.join(os.path.dirname(scratch), "escape.txt"))

    def test_os_level_write_blocked(self, factory, tmp_path):
        target = tmp_path / "escape2.txt"
        with factory.session("i11", POINTS_TABLE) as session:
            result = session.run(
                f"import os\nos.open({str(target)!r}, os.O_WRONLY | os.O_CREAT)"
            )
        assert result.status is SandboxStatus.RUNTIME_ERROR
        assert not target.exists()

    def test_network_denied(self, factory):
        with factory.session("i12", POINTS_TABLE) as session:
            result = session.run("import socket\nsocket.socket()")
        assert result.status is SandboxStatus.RUNTIME_ERROR
        assert "network access is disabled" in result.stderr

    def test_subprocess_denied(self, factory):
        with factory.session("i13", POINTS_TABLE) as session:
            result = session.run("import subprocess\nsubprocess.run(['ls'])")
        assert result.status is SandboxStatus.RUNTIME_ERROR
        assert "subprocess execution is disabled" in result.stderr

    def test_os_system_denied(self, factory):
        with factory.session("i14", POINTS_TABLE) as session:
            result = session.run("import os\nos.system('ls')")
        assert result.status is SandboxStatus.RUNTIME_ERROR


class TestLimits:
    def test_timeout_kills_within_twice_the_limit(self):
        factory = SandboxFactory(limits=SandboxLimits(wall_ms=2000))
        with factory.session("slow", POINTS_TABLE) as session:
            result = session.run("import time\ntime.sleep(30)")
        assert result.status is SandboxStatus.TIMEOUT
        assert result.wall_ms <= 2 * 2000

    def test_output_cap_marks_limit_exceeded(self):
        factory = SandboxFactory(
            limits=SandboxLimits(wall_ms=20000, max_output_kb=4)
        )
        with factory.session("loud", POINTS_TABLE) as session:
            result = session.run("print('x' * 200000)")
        assert result.status is SandboxStatus.LIMIT_EXCEEDED
        assert len(result.stdout.encode()) <= 4 * 1024

    def test_scratch_removed_on_close(self):
        factory = SandboxFactory(limits=SandboxLimits(wall_ms=20000))
        session = factory.session("gone", POINTS_TABLE)
        session.run("print(1)")
        scratch = session.scratch
        assert scratch is not None and os.path.isdir(scratch)
        session.close()
        assert not os.path.exists(scratch)


class TestFactory:
    def test_missing_interpreter_rejected(self):
        with pytest.raises(InterpreterMissing):
            SandboxFactory(interpreter="/nonexistent/python3")

    def test_non_executable_interpreter_rejected(self, tmp_path):
        fake = tmp_path / "python3"
        fake.write_text("")
        with pytest.raises(InterpreterMissing):
            SandboxFactory(interpreter=str(fake))
