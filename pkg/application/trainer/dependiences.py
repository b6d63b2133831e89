from dcnet_model.dependiences import model_service
from trainer.repositories import MetricsCsvRepository
from trainer.services import TrainerService


def trainer_service():
    return TrainerService(MetricsCsvRepository, model_service())
